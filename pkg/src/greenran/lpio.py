"""LP text format writer and a small reader for round-trip checks.

The writer emits the classic sections (Minimize / Subject To / Bounds /
Binary / End) with row names carrying the model's constraint tags, so the
file stays grep-able against the formulation. The reader parses the same
dialect back into plain arrays; it exists so exports can be verified without
an external solver, and it accepts files written by mainstream tools as long
as they stick to these sections.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .milp import MilpModel, SENSE_EQ, SENSE_GE, SENSE_LE

_SENSE_TXT = {SENSE_LE: "<=", SENSE_EQ: "=", SENSE_GE: ">="}
_WRAP = 180  # wrap long expressions for old parsers


def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def export_model(model: MilpModel, path: str | Path, name: str = "model") -> None:
    """Write the model in LP text format."""
    names = [model.var_name(j) for j in range(model.n_cols)]
    a_csr = model.a_matrix
    out: list[str] = [f"\\ {name}", "Minimize"]

    obj_terms = []
    nz = np.nonzero(model.c)[0]
    for j in nz:
        obj_terms.append(_term(model.c[j], names[j], not obj_terms))
    if model.const:
        obj_terms.append(_term(model.const, "", not obj_terms))
    if not obj_terms:
        obj_terms.append("0 " + names[0])
    out.append(_wrap(" obj: " + " ".join(obj_terms)))

    out.append("Subject To")
    indptr, indices, data = a_csr.indptr, a_csr.indices, a_csr.data
    for row in range(model.n_rows):
        terms = []
        for pos in range(indptr[row], indptr[row + 1]):
            coef = data[pos]
            if coef == 0.0:
                continue
            terms.append(_term(coef, names[indices[pos]], not terms))
        if not terms:
            terms.append("0 " + names[0])
        line = (f" {model.row_name(row)}: " + " ".join(terms)
                + f" {_SENSE_TXT[int(model.sense[row])]} {_num(model.rhs[row])}")
        out.append(_wrap(line))

    out.append("Bounds")
    for j in range(model.n_cols):
        if model.is_binary[j]:
            continue
        lo, hi = model.lb[j], model.ub[j]
        hi_txt = "+inf" if np.isinf(hi) else _num(hi)
        out.append(f" {_num(lo)} <= {names[j]} <= {hi_txt}")

    binaries = [names[j] for j in range(model.n_cols) if model.is_binary[j]]
    if binaries:
        out.append("Binary")
        for k in range(0, len(binaries), 12):
            out.append(" " + " ".join(binaries[k:k + 12]))
    out.append("End")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def _term(coef: float, var: str, first: bool) -> str:
    sign = "-" if coef < 0 else ("" if first else "+")
    mag = _num(abs(coef))
    body = f"{mag} {var}".rstrip() if var else mag
    return f"{sign} {body}".strip() if not first else (sign + body)


def _wrap(line: str) -> str:
    if len(line) <= _WRAP:
        return line
    parts = line.split(" ")
    rows, cur = [], ""
    for p in parts:
        if cur and len(cur) + len(p) + 1 > _WRAP:
            rows.append(cur)
            cur = "   " + p
        else:
            cur = p if not cur else cur + " " + p
    rows.append(cur)
    return "\n".join(rows)


@dataclass
class ParsedLP:
    objective: dict[str, float]
    const: float
    rows: list[tuple[str, dict[str, float], str, float]]  # name, coefs, sense, rhs
    bounds: dict[str, tuple[float, float]]
    binaries: set[str]

    @property
    def variables(self) -> set[str]:
        seen = set(self.objective)
        for _, coefs, _, _ in self.rows:
            seen.update(coefs)
        seen.update(self.bounds)
        seen.update(self.binaries)
        return seen


def read_lp(path: str | Path) -> ParsedLP:
    """Parse the LP dialect written by export_model."""
    text = Path(path).read_text(encoding="utf-8")
    section = None
    obj_tokens: list[str] = []
    row_chunks: list[list[str]] = []
    bound_lines: list[str] = []
    binaries: set[str] = set()
    for raw in text.splitlines():
        line = raw.split("\\")[0].strip()
        if not line:
            continue
        low = line.lower()
        if low in ("minimize", "maximize", "min", "max"):
            section = "obj"
            continue
        if low in ("subject to", "s.t.", "st"):
            section = "rows"
            continue
        if low == "bounds":
            section = "bounds"
            continue
        if low in ("binary", "binaries", "bin"):
            section = "bin"
            continue
        if low in ("general", "generals", "end"):
            section = "done" if low == "end" else "gen"
            continue
        if section == "obj":
            obj_tokens.extend(line.split())
        elif section == "rows":
            if ":" in line:
                row_chunks.append([])
            if not row_chunks:
                row_chunks.append([])
            row_chunks[-1].extend(line.split())
        elif section == "bounds":
            bound_lines.append(line)
        elif section == "bin":
            binaries.update(line.split())
    if obj_tokens and obj_tokens[0].endswith(":"):
        obj_tokens = obj_tokens[1:]
    elif obj_tokens and ":" in obj_tokens[0]:
        obj_tokens[0] = obj_tokens[0].split(":", 1)[1]
        obj_tokens = [t for t in obj_tokens if t]
    objective, const, _, _ = _parse_expr(obj_tokens, allow_rhs=False)

    rows = []
    for chunk in row_chunks:
        joined = " ".join(chunk)
        name, expr = joined.split(":", 1)
        coefs, const_term, sense, rhs = _parse_expr(expr.split(), allow_rhs=True)
        rows.append((name.strip(), coefs, sense, rhs - const_term))
    bounds: dict[str, tuple[float, float]] = {}
    for line in bound_lines:
        bounds.update(_parse_bound(line))
    return ParsedLP(objective, const, rows, bounds, binaries)


def _to_float(tok: str) -> float | None:
    try:
        return float(tok)
    except ValueError:
        return None


def _parse_expr(tokens: list[str], allow_rhs: bool):
    coefs: dict[str, float] = {}
    const = 0.0
    sense = None
    rhs = 0.0
    sign = 1.0
    pending: float | None = None
    k = 0
    while k < len(tokens):
        tok = tokens[k]
        if tok in ("<=", "=<", "<"):
            sense = "<="
        elif tok in (">=", "=>", ">"):
            sense = ">="
        elif tok == "=":
            sense = "="
        elif tok == "+":
            sign = 1.0
        elif tok == "-":
            sign = -1.0
        else:
            if sense is not None:
                rhs = float(tok)
                k += 1
                continue
            val = _to_float(tok)
            if val is not None:
                if pending is None:
                    pending = sign * val
                    sign = 1.0
                else:  # two numbers in a row: first was a constant
                    const += pending
                    pending = sign * val
                    sign = 1.0
            else:
                coef = sign if pending is None else pending
                coefs[tok] = coefs.get(tok, 0.0) + coef
                pending = None
                sign = 1.0
        k += 1
    if pending is not None:
        const += pending
    if allow_rhs and sense is None:
        raise ValueError(f"constraint without sense: {' '.join(tokens[:8])}...")
    return coefs, const, sense, rhs


def _parse_bound(line: str) -> dict[str, tuple[float, float]]:
    toks = line.replace("<=", " <= ").replace(">=", " >= ").split()
    inf = float("inf")

    def val(tok: str) -> float:
        t = tok.lower().lstrip("+")
        if t in ("inf", "infinity"):
            return inf
        if t in ("-inf", "-infinity"):
            return -inf
        return float(tok)

    if len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
        return {toks[2]: (val(toks[0]), val(toks[4]))}
    if len(toks) == 3 and toks[1] == "<=":
        if _to_float(toks[0]) is not None or toks[0].lower().lstrip("+-") in ("inf", "infinity"):
            return {toks[2]: (val(toks[0]), inf)}
        return {toks[0]: (0.0, val(toks[2]))}
    if len(toks) == 3 and toks[1] == ">=":
        return {toks[0]: (val(toks[2]), inf)}
    if len(toks) == 2 and toks[1].lower() == "free":
        return {toks[0]: (-inf, inf)}
    raise ValueError(f"cannot parse bound line: {line!r}")
