"""Plain-text model files.

The file is a list of ``key=value`` lines followed by bracketed sections.
Floats are written with 17 significant digits so a loaded model reproduces
decision values bit for bit.
"""

from __future__ import annotations

import io
from typing import TextIO

import numpy as np

from .core import OneClassModel, PmiModel, QueryEntry, Role, Termination
from .data import Label, ScaleParams, format_float
from .kernels import KernelSpec

FORMAT = "pmi-model/1"


class ModelFormatError(ValueError):
    pass


def dumps(pmi: PmiModel) -> str:
    m = pmi.model
    out = io.StringIO()
    w = out.write
    w(f"format={FORMAT}\n")
    w(f"kernel={m.kernel}\n")
    w(f"nu={format_float(pmi.nu)}\n")
    w(f"rho={format_float(m.rho)}\n")
    w(f"upper={format_float(m.upper)}\n")
    w(f"margin={format_float(m.margin)}\n")
    w(f"retrained={int(m.retrained)}\n")
    w(f"termination_reason={pmi.termination_reason.value}\n")
    w(f"query_bound={pmi.query_bound}\n")
    w(f"queries={len(pmi.queries)}\n")
    w(f"dimension={m.vectors.shape[1]}\n")
    w(f"expansion_size={len(m.weights)}\n")
    w("[alpha]\n")
    for a in m.alpha:
        w(format_float(a) + "\n")
    w("[roles]\n")
    for r in m.bag_roles:
        w(r.value + "\n")
    w("[queries]\n")
    for q in pmi.queries:
        w(f"{q.iteration},{q.bag_index},{q.instance_index},{format_float(q.value)},{q.answer.token}\n")
    if pmi.scale is not None:
        w("[scale]\n")
        w(",".join(["lo"] + [format_float(v) for v in pmi.scale.lo]) + "\n")
        w(",".join(["hi"] + [format_float(v) for v in pmi.scale.hi]) + "\n")
    w("[expansion]\n")
    for weight, vec in zip(m.weights, m.vectors):
        w(",".join([format_float(weight)] + [format_float(v) for v in vec]) + "\n")
    return out.getvalue()


def save(pmi: PmiModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(pmi))


def loads(text: str) -> PmiModel:
    header: dict[str, str] = {}
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            key, sep, value = line.partition("=")
            if not sep:
                raise ModelFormatError(f"line {lineno}: expected key=value")
            header[key] = value
        else:
            sections[current].append(line)
    if header.get("format") != FORMAT:
        raise ModelFormatError(f"not a {FORMAT} file")
    try:
        d = int(header["dimension"])
        rows = [list(map(float, r.split(","))) for r in sections.get("expansion", [])]
        if any(len(r) != d + 1 for r in rows):
            raise ModelFormatError("expansion rows do not match the dimension")
        exp = np.array(rows, dtype=np.float64).reshape(len(rows), d + 1)
        if len(exp) != int(header["expansion_size"]):
            raise ModelFormatError("expansion size mismatch")
        queries = []
        for r in sections.get("queries", []):
            it, b, i, v, a = r.split(",")
            queries.append(QueryEntry(int(it), int(b), int(i), float(v),
                                      Label({"+1": 1, "-1": -1, "?": 0}[a])))
        scale = None
        if "scale" in sections:
            lines = {r.split(",", 1)[0]: r.split(",")[1:] for r in sections["scale"]}
            scale = ScaleParams(np.array(lines["lo"], dtype=float), np.array(lines["hi"], dtype=float))
        model = OneClassModel(
            kernel=KernelSpec.parse(header["kernel"]),
            alpha=np.array([float(v) for v in sections.get("alpha", [])]),
            rho=float(header["rho"]),
            upper=float(header["upper"]),
            weights=exp[:, 0].copy(),
            vectors=exp[:, 1:].copy(),
            bag_roles=tuple(Role(v) for v in sections.get("roles", [])),
            retrained=bool(int(header["retrained"])),
            margin=float(header["margin"]),
        )
        return PmiModel(
            model=model,
            nu=float(header["nu"]),
            termination_reason=Termination(header["termination_reason"]),
            queries=tuple(queries),
            query_bound=int(header["query_bound"]),
            scale=scale,
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc}") from exc


def load(path_or_file: str | TextIO) -> PmiModel:
    if hasattr(path_or_file, "read"):
        return loads(path_or_file.read())
    with open(path_or_file, encoding="utf-8") as fh:
        return loads(fh.read())
