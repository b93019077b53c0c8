"""Model persistence: a canonical JSON document and a line-oriented text dump.

Both formats carry the full per-node statistics (G, H, count, score) so a
model written on one side can be revised on the other. Floats are written in
Python's shortest round-trip form, which makes reloading bit-exact.

Text dump grammar (one item per line)::

    tlboost-dump version=1                 optional preamble, any order
    base_score=<float>
    feature_names=<JSON list of strings>
    train_constants=l2_reg=<f>,leaf_penalty=<f>,shrinkage=<f>
    provenance=<JSON object>
    tree[<i>]: [l2_reg=<float>]            trees numbered 0, 1, 2, ...
    <id>:[f<feature><<threshold>] left=<id> right=<id> gain=<f> cover=<f> G=<f> H=<f> count=<n> score=<f> origin=<o>
    <id>:leaf=<weight>,count=<n>,G=<f>,H=<f>,score=<f>,origin=<o>

Key/value fields may be separated by commas or spaces. ``yes``/``no`` are
accepted for ``left``/``right`` and ``missing`` is ignored, so plain boosted
tree dumps without G/H parse too; such models are flagged stats-incomplete.
"""

from __future__ import annotations

import json
import math
import os
import re
import tempfile
from typing import Optional

from .tree import ORIGINS, Ensemble, ModelError, Tree, TreeNode

FORMAT_VERSION = 1
DUMP_MAGIC = "tlboost-dump"


class ModelFormatError(ModelError):
    """A serialized model could not be parsed or failed validation."""


# -- canonical document -----------------------------------------------------

def _node_to_dict(n: TreeNode) -> dict:
    d = {"id": n.node_id, "G": n.G, "H": n.H, "count": n.count,
         "score": n.score, "origin": n.origin}
    if n.is_leaf:
        d.update(kind="leaf", weight=n.weight)
    else:
        d.update(kind="internal", feature=n.feature, threshold=n.threshold,
                 left=n.left, right=n.right, gain=n.gain)
    return d


def to_document(model: Ensemble, include_provenance: bool = True) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "base_score": model.base_score,
        "feature_names": list(model.feature_names),
        "train_constants": {"l2_reg": model.l2_reg,
                            "leaf_penalty": model.leaf_penalty,
                            "shrinkage": model.shrinkage},
        "stats_complete": model.stats_complete,
        "trees": [{"l2_reg": t.l2_reg, "nodes": [_node_to_dict(n) for n in t.nodes]}
                  for t in model.trees],
    }
    if include_provenance:
        doc["provenance"] = model.provenance
    return doc


def dumps(model: Ensemble, include_provenance: bool = True) -> str:
    """Serialize to canonical text; identical models give identical bytes."""
    return json.dumps(to_document(model, include_provenance), sort_keys=True,
                      indent=1, allow_nan=False) + "\n"


def _num(value, what, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelFormatError(f"{what}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ModelFormatError(f"{what}: non-finite value")
    return value


def _int(value, what, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ModelFormatError(f"{what}: expected an integer, got {value!r}")
    return value


def _node_from_dict(d: dict, where: str, stats_required: bool) -> TreeNode:
    if not isinstance(d, dict):
        raise ModelFormatError(f"{where}: node must be an object")
    try:
        nid = _int(d["id"], f"{where}.id")
        kind = d["kind"]
        origin = d.get("origin", "source")
        stats = {k: d[k] for k in ("G", "H", "count", "score")}
    except KeyError as exc:
        raise ModelFormatError(f"{where}: missing field {exc.args[0]!r}") from None
    where = f"{where} (node {nid})"
    if origin not in ORIGINS:
        raise ModelFormatError(f"{where}: unknown origin {origin!r}")
    G = _num(stats["G"], f"{where}.G", not stats_required)
    H = _num(stats["H"], f"{where}.H", not stats_required)
    count = _int(stats["count"], f"{where}.count", not stats_required)
    score = _num(stats["score"], f"{where}.score", not stats_required)
    try:
        if kind == "leaf":
            return TreeNode(nid, weight=_num(d["weight"], f"{where}.weight"),
                            G=G, H=H, count=count, score=score, origin=origin)
        if kind == "internal":
            feature = _int(d["feature"], f"{where}.feature")
            if feature < 0:
                raise ModelFormatError(f"{where}: negative feature index")
            return TreeNode(nid, feature=feature,
                            threshold=_num(d["threshold"], f"{where}.threshold"),
                            left=_int(d["left"], f"{where}.left"),
                            right=_int(d["right"], f"{where}.right"),
                            G=G, H=H, count=count, score=score,
                            gain=_num(d.get("gain"), f"{where}.gain", True),
                            origin=origin)
    except KeyError as exc:
        raise ModelFormatError(f"{where}: missing field {exc.args[0]!r}") from None
    raise ModelFormatError(f"{where}: unknown node kind {kind!r}")


def from_document(doc: dict) -> Ensemble:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version!r}")
    try:
        consts = doc["train_constants"]
        names = doc["feature_names"]
        trees_doc = doc["trees"]
        stats_required = doc.get("stats_complete", True)
        trees = []
        for i, td in enumerate(trees_doc):
            nodes = [_node_from_dict(nd, f"tree {i}", stats_required)
                     for nd in td["nodes"]]
            tree = Tree.from_nodes(nodes, _num(td["l2_reg"], f"tree {i}.l2_reg"))
            tree.validate_stats()
            trees.append(tree)
        if not isinstance(names, list) or not all(isinstance(s, str) for s in names):
            raise ModelFormatError("feature_names must be a list of strings")
        if len(set(names)) != len(names):
            raise ModelFormatError("feature_names must be unique")
        return Ensemble(trees=trees,
                        base_score=_num(doc["base_score"], "base_score"),
                        feature_names=names,
                        l2_reg=_num(consts["l2_reg"], "l2_reg"),
                        leaf_penalty=_num(consts["leaf_penalty"], "leaf_penalty"),
                        shrinkage=_num(consts["shrinkage"], "shrinkage"),
                        provenance=dict(doc.get("provenance", {})))
    except KeyError as exc:
        raise ModelFormatError(f"missing field {exc.args[0]!r}") from None
    except ModelFormatError:
        raise
    except ModelError as exc:
        raise ModelFormatError(str(exc)) from None


def loads(text: str) -> Ensemble:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    return from_document(doc)


def _atomic_write(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".model")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(model: Ensemble, path) -> None:
    _atomic_write(path, dumps(model))


def load(path) -> Ensemble:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def models_equal(a: Ensemble, b: Ensemble) -> bool:
    """Bit-level equality of everything except free-form provenance."""
    return dumps(a, include_provenance=False) == dumps(b, include_provenance=False)


# -- text dump --------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _stat_fields(n: TreeNode) -> list:
    out = []
    if n.count is not None:
        out.append(("count", str(n.count)))
    if n.G is not None:
        out.append(("G", _fmt(n.G)))
    if n.H is not None:
        out.append(("H", _fmt(n.H)))
    if n.score is not None:
        out.append(("score", _fmt(n.score)))
    out.append(("origin", n.origin))
    return out


def dump_text(model: Ensemble) -> str:
    lines = [
        f"{DUMP_MAGIC} version={FORMAT_VERSION}",
        f"base_score={_fmt(model.base_score)}",
        "feature_names=" + json.dumps(list(model.feature_names)),
        f"train_constants=l2_reg={_fmt(model.l2_reg)},"
        f"leaf_penalty={_fmt(model.leaf_penalty)},shrinkage={_fmt(model.shrinkage)}",
        "provenance=" + json.dumps(model.provenance, sort_keys=True),
    ]
    for i, tree in enumerate(model.trees):
        lines.append(f"tree[{i}]: l2_reg={_fmt(tree.l2_reg)}")
        for n in tree.nodes:
            if n.is_leaf:
                fields = ",".join(f"{k}={v}" for k, v in _stat_fields(n))
                lines.append(f"{n.node_id}:leaf={_fmt(n.weight)},{fields}")
            else:
                fields = [("left", str(n.left)), ("right", str(n.right))]
                if n.gain is not None:
                    fields.append(("gain", _fmt(n.gain)))
                if n.H is not None:
                    fields.append(("cover", _fmt(n.H)))
                fields.extend(_stat_fields(n))
                body = " ".join(f"{k}={v}" for k, v in fields)
                lines.append(f"{n.node_id}:[f{n.feature}<{_fmt(n.threshold)}] {body}")
    return "\n".join(lines) + "\n"


_TREE_RE = re.compile(r"^tree\[(\d+)\]:\s*(.*)$")
_SPLIT_RE = re.compile(r"^(\d+):\[f(\d+)\s*<\s*([^\]\s]+)\s*\]\s*(.*)$")
_LEAF_RE = re.compile(r"^(\d+):leaf=([^,\s]+)[,\s]*(.*)$")
_KV_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)=([^,\s]+)")

_INT_KEYS = {"left", "right", "yes", "no", "missing", "count"}
_FLOAT_KEYS = {"gain", "cover", "G", "H", "score", "l2_reg"}


def _kv(text: str, lineno: int) -> dict:
    out = {}
    rest = _KV_RE.sub("", text).replace(",", " ").strip()
    if rest:
        raise ModelFormatError(f"line {lineno}: unexpected text {rest!r}")
    for key, raw in _KV_RE.findall(text):
        if key in out:
            raise ModelFormatError(f"line {lineno}: duplicate field {key!r}")
        if key in _INT_KEYS:
            try:
                out[key] = int(raw)
            except ValueError:
                raise ModelFormatError(f"line {lineno}: bad integer {key}={raw}") from None
        elif key in _FLOAT_KEYS:
            out[key] = _parse_float(raw, lineno)
        elif key == "origin":
            if raw not in ORIGINS:
                raise ModelFormatError(f"line {lineno}: unknown origin {raw!r}")
            out[key] = raw
        else:
            raise ModelFormatError(f"line {lineno}: unknown field {key!r}")
    return out


def _parse_float(raw: str, lineno: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ModelFormatError(f"line {lineno}: bad number {raw!r}") from None
    if not math.isfinite(value):
        raise ModelFormatError(f"line {lineno}: non-finite number {raw!r}")
    return value


def _text_node(line: str, lineno: int) -> Optional[TreeNode]:
    m = _SPLIT_RE.match(line)
    if m:
        nid, feature, thr, rest = m.groups()
        kv = _kv(rest, lineno)
        left = kv.get("left", kv.get("yes"))
        right = kv.get("right", kv.get("no"))
        if left is None or right is None:
            raise ModelFormatError(f"line {lineno}: split node without children")
        H = kv.get("H", kv.get("cover"))
        if "H" in kv and "cover" in kv and kv["H"] != kv["cover"]:
            raise ModelFormatError(f"line {lineno}: cover disagrees with H")
        return TreeNode(int(nid), feature=int(feature),
                        threshold=_parse_float(thr, lineno), left=left, right=right,
                        G=kv.get("G"), H=H, count=kv.get("count"),
                        score=kv.get("score"), gain=kv.get("gain"),
                        origin=kv.get("origin", "source"))
    m = _LEAF_RE.match(line)
    if m:
        nid, weight, rest = m.groups()
        kv = _kv(rest, lineno)
        return TreeNode(int(nid), weight=_parse_float(weight, lineno),
                        G=kv.get("G"), H=kv.get("H", kv.get("cover")),
                        count=kv.get("count"), score=kv.get("score"),
                        origin=kv.get("origin", "source"))
    return None


def parse_text(text: str) -> Ensemble:
    """Inverse of :func:`dump_text`; also reads bare per-node dumps."""
    meta = {}
    trees = []  # list of (l2_reg, nodes, seen_ids, header_line)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _TREE_RE.match(line)
        if m:
            idx = int(m.group(1))
            if idx != len(trees):
                raise ModelFormatError(
                    f"line {lineno}: expected tree[{len(trees)}], got tree[{idx}]")
            kv = _kv(m.group(2), lineno)
            if set(kv) - {"l2_reg"}:
                raise ModelFormatError(f"line {lineno}: unexpected tree header fields")
            trees.append((kv.get("l2_reg", meta.get("l2_reg", 1.0)), [], set(), lineno))
            continue
        node = _text_node(line, lineno)
        if node is not None:
            if not trees:
                raise ModelFormatError(f"line {lineno}: node before any tree header")
            _, nodes, seen, _ = trees[-1]
            if node.node_id in seen:
                raise ModelFormatError(f"line {lineno}: duplicate node_id {node.node_id}")
            seen.add(node.node_id)
            nodes.append(node)
            continue
        if trees:
            raise ModelFormatError(f"line {lineno}: syntax error: {line!r}")
        _parse_meta(line, lineno, meta)

    built = []
    for l2_reg, nodes, _, header in trees:
        try:
            tree = Tree.from_nodes(nodes, l2_reg)
            tree.validate_stats()
        except ModelFormatError:
            raise
        except ModelError as exc:
            raise ModelFormatError(f"tree at line {header}: {exc}") from None
        built.append(tree)

    names = meta.get("feature_names")
    if names is None:
        d = max([t.max_feature() for t in built] + [0]) + 1
        names = [f"f{i}" for i in range(d)]
    try:
        return Ensemble(trees=built, base_score=meta.get("base_score", 0.0),
                        feature_names=names, l2_reg=meta.get("l2_reg", 1.0),
                        leaf_penalty=meta.get("leaf_penalty", 0.0),
                        shrinkage=meta.get("shrinkage", 0.1),
                        provenance=meta.get("provenance", {}))
    except ModelFormatError:
        raise
    except ModelError as exc:
        raise ModelFormatError(str(exc)) from None


def _parse_meta(line: str, lineno: int, meta: dict):
    if line.startswith(DUMP_MAGIC):
        kv = dict(_KV_RE.findall(line[len(DUMP_MAGIC):]))
        if kv.get("version") != str(FORMAT_VERSION):
            raise ModelFormatError(
                f"line {lineno}: unsupported dump version {kv.get('version')!r}")
        return
    key, sep, value = line.partition("=")
    if not sep:
        raise ModelFormatError(f"line {lineno}: syntax error: {line!r}")
    if key == "base_score":
        meta["base_score"] = _parse_float(value, lineno)
    elif key in ("feature_names", "provenance"):
        try:
            meta[key] = json.loads(value)
        except json.JSONDecodeError:
            raise ModelFormatError(f"line {lineno}: malformed {key}") from None
    elif key == "train_constants":
        for k, v in _KV_RE.findall(value):
            if k not in ("l2_reg", "leaf_penalty", "shrinkage"):
                raise ModelFormatError(f"line {lineno}: unknown constant {k!r}")
            meta[k] = _parse_float(v, lineno)
    else:
        raise ModelFormatError(f"line {lineno}: unknown header {key!r}")
