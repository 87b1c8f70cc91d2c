"""DMRS catalog (levels -> mechanisms -> indicators) and per-label defense definitions."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

N_LEVELS = 7
N_MECHANISMS = 30
N_INDICATORS = 150


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class Level:
    id: int
    name: str


@dataclass(frozen=True)
class Mechanism:
    id: str
    name: str
    level: int
    definition: str
    pattern_description: str
    exemplars: tuple[str, ...]


@dataclass(frozen=True)
class Indicator:
    id: str
    mechanism: str
    statement: str


@dataclass
class DmrsCatalog:
    levels: list[Level]
    mechanisms: list[Mechanism]
    indicators: list[Indicator]
    fingerprint: str = ""
    # indicator position -> mechanism position, mechanism position -> level id
    indicator_mechanism: list[int] = field(default_factory=list, repr=False)
    mechanism_level: list[int] = field(default_factory=list, repr=False)

    def level_name(self, level_id: int) -> str:
        for lv in self.levels:
            if lv.id == level_id:
                return lv.name
        raise KeyError(level_id)

    def mechanisms_for_level(self, level_id: int) -> list[Mechanism]:
        return [m for m in self.mechanisms if m.level == level_id]

    def generation_view(self) -> dict:
        """Everything prompt rendering depends on (levels and mechanisms, not indicators)."""
        return {
            "levels": [[lv.id, lv.name] for lv in self.levels],
            "mechanisms": [[m.id, m.name, m.level, m.definition, m.pattern_description,
                            list(m.exemplars)] for m in self.mechanisms],
        }


def _require(rec: dict, key: str, kind: str, where: str):
    if key not in rec:
        raise CatalogError(f"{where}: missing {key!r}")
    val = rec[key]
    if kind == "str" and (not isinstance(val, str) or not val.strip()):
        raise CatalogError(f"{where}: {key!r} must be a non-empty string")
    if kind == "int" and (not isinstance(val, int) or isinstance(val, bool)):
        raise CatalogError(f"{where}: {key!r} must be an integer")
    return val


def catalog_from_dict(doc: dict, *, n_mechanisms: int = N_MECHANISMS,
                      n_indicators: int = N_INDICATORS) -> DmrsCatalog:
    for key in ("levels", "mechanisms", "indicators"):
        if not isinstance(doc.get(key), list):
            raise CatalogError(f"catalog needs a {key!r} array")

    levels = [Level(_require(r, "id", "int", f"levels[{i}]"), _require(r, "name", "str", f"levels[{i}]"))
              for i, r in enumerate(doc["levels"])]
    if sorted(lv.id for lv in levels) != list(range(1, N_LEVELS + 1)):
        raise CatalogError(f"expected levels 1..{N_LEVELS}, found {sorted(lv.id for lv in levels)}")

    mechanisms = []
    for i, r in enumerate(doc["mechanisms"]):
        where = f"mechanisms[{i}]"
        ex = r.get("exemplars")
        if not isinstance(ex, list) or len(ex) < 3 or not all(isinstance(e, str) and e for e in ex):
            raise CatalogError(f"{where}: needs at least 3 non-empty exemplars")
        mechanisms.append(Mechanism(
            _require(r, "id", "str", where), _require(r, "name", "str", where),
            _require(r, "level", "int", where), _require(r, "definition", "str", where),
            _require(r, "pattern_description", "str", where), tuple(ex)))
    if len(mechanisms) != n_mechanisms:
        raise CatalogError(f"expected {n_mechanisms} mechanisms, found {len(mechanisms)}")

    indicators = [Indicator(_require(r, "id", "str", f"indicators[{i}]"),
                            _require(r, "mechanism", "str", f"indicators[{i}]"),
                            _require(r, "statement", "str", f"indicators[{i}]"))
                  for i, r in enumerate(doc["indicators"])]
    if len(indicators) != n_indicators:
        raise CatalogError(f"expected {n_indicators} indicators, found {len(indicators)}")

    level_ids = {lv.id for lv in levels}
    mech_pos = {}
    for pos, m in enumerate(mechanisms):
        if m.id in mech_pos:
            raise CatalogError(f"duplicate mechanism id {m.id!r}")
        if m.level not in level_ids:
            raise CatalogError(f"mechanism {m.id!r} references unknown level {m.level}")
        mech_pos[m.id] = pos
    seen_ind = set()
    for ind in indicators:
        if ind.id in seen_ind:
            raise CatalogError(f"duplicate indicator id {ind.id!r}")
        seen_ind.add(ind.id)
        if ind.mechanism not in mech_pos:
            raise CatalogError(f"indicator {ind.id!r} references unknown mechanism {ind.mechanism!r}")
    empty_levels = level_ids - {m.level for m in mechanisms}
    if empty_levels:
        raise CatalogError(f"levels without mechanisms: {sorted(empty_levels)}")
    bare = set(mech_pos) - {ind.mechanism for ind in indicators}
    if bare:
        raise CatalogError(f"mechanisms without indicators: {sorted(bare)}")

    canonical = json.dumps({k: doc[k] for k in ("levels", "mechanisms", "indicators")},
                           sort_keys=True, ensure_ascii=False)
    return DmrsCatalog(
        levels=sorted(levels, key=lambda lv: lv.id),
        mechanisms=mechanisms,
        indicators=indicators,
        fingerprint=hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        indicator_mechanism=[mech_pos[ind.mechanism] for ind in indicators],
        mechanism_level=[m.level for m in mechanisms],
    )


def load_dmrs_catalog(path: Optional[str | Path] = None) -> DmrsCatalog:
    """Load and validate a catalog file; ``None`` loads the bundled miniature catalog."""
    if path is None:
        text = resources.files("psydef.data").joinpath("dmrs_mini.json").read_text(encoding="utf-8")
    else:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"catalog file not found: {path}")
        text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CatalogError(f"catalog is not valid JSON: {exc}") from None
    return catalog_from_dict(doc)


# ---------------------------------------------------------------------------
# definitions used for prompting / adherence

@dataclass(frozen=True)
class DefenseDefinition:
    level: int
    mechanism_name: str
    definition: str
    pattern_description: str
    exemplars: tuple[str, ...]
    level_name: str = ""


def load_supplementary_definitions(path: Optional[str | Path] = None) -> dict[int, DefenseDefinition]:
    """Working definitions for labels 0 and 8, which have no DMRS items."""
    if path is None:
        text = resources.files("psydef.data").joinpath("supplementary_definitions.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    out = {}
    for r in doc["definitions"]:
        out[int(r["level"])] = DefenseDefinition(int(r["level"]), r["mechanism_name"], r["definition"],
                                                 r["pattern_description"], tuple(r["exemplars"]),
                                                 r.get("level_name", r["mechanism_name"]))
    missing = {0, 8} - set(out)
    if missing:
        raise CatalogError(f"supplementary definitions missing labels {sorted(missing)}")
    return out


def definitions_for_label(label: int, catalog: DmrsCatalog,
                          supplementary: dict[int, DefenseDefinition]) -> list[DefenseDefinition]:
    """All definitions usable for a label: one per mechanism for levels 1-7, the supplementary entry otherwise."""
    if label in supplementary and not 1 <= label <= N_LEVELS:
        return [supplementary[label]]
    if not 1 <= label <= N_LEVELS:
        raise KeyError(f"no definition for label {label}")
    name = catalog.level_name(label)
    return [DefenseDefinition(label, m.name, m.definition, m.pattern_description, m.exemplars, name)
            for m in catalog.mechanisms_for_level(label)]
