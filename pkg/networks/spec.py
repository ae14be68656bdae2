"""
Network spec documents.

A spec is the JSON document ``{"generator", "params", "conductance", "root"}``
that fully determines a network, its vertex ids included. Parsing goes through
pydantic; semantic checks that depend on several fields raise
``NetworkSpecException`` naming the offending field so the CLI error report
can point at it.
"""

import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from core.exceptions import NetworkSpecException


class GeneratorKind(str, Enum):
    LATTICE = "lattice"
    HALF_LINE = "half-line"
    INTEGER_LINE = "integer-line"
    REGULAR_TREE = "regular-tree"
    PHI_PRODUCT_LATTICE = "phi-product-lattice"
    EXPLICIT_EDGE_LIST = "explicit-edge-list"


class ConductanceRule(str, Enum):
    UNIT = "unit"
    PER_EDGE = "per-edge"
    PHI_PRODUCT = "phi-product"
    LEVEL_DECAY = "level-decay"


class SidePolicy(str, Enum):
    FULL = "full"
    HALF = "half"


Label = Union[int, str, List[Any]]


class GeneratorParams(BaseModel):
    """Generator parameters; which ones are required depends on the generator"""
    model_config = ConfigDict(extra='forbid')

    d: Optional[int] = Field(default=None, description="Lattice dimension, 1 to 5")
    side_policy: Optional[SidePolicy] = Field(default=None, description="full: Z^d; half: first coordinate >= 0")
    branching: Optional[int] = Field(default=None, description="Children per vertex for regular trees")
    truncation_radius: Optional[int] = Field(default=None, description="Ball radius of the phi oracle truncation")
    edges: Optional[List[List[Any]]] = Field(default=None, description="Explicit edges [u, v] or [u, v, c]")


class ConductanceSpec(BaseModel):
    """Conductance rule with its parameters"""
    model_config = ConfigDict(extra='forbid')

    rule: ConductanceRule = Field(default=ConductanceRule.UNIT, description="Conductance rule")
    table: Optional[List[List[Any]]] = Field(default=None, description="Per-edge entries [u, v, c]")
    default: Optional[float] = Field(default=None, description="Per-edge fallback conductance")
    decay: Optional[float] = Field(default=None, description="Level-decay ratio for trees")
    scale: float = Field(default=1.0, description="Global factor applied to every conductance")

    @field_validator('scale')
    @classmethod
    def scale_positive(cls, v):
        if not v > 0:
            raise ValueError(f"scale must be positive, got {v}")
        return v

    @field_validator('default')
    @classmethod
    def default_positive(cls, v):
        if v is not None and not v > 0:
            raise ValueError(f"default conductance must be positive, got {v}")
        return v

    @field_validator('decay')
    @classmethod
    def decay_in_range(cls, v):
        if v is not None and not 0 < v <= 1:
            raise ValueError(f"decay must be in (0, 1], got {v}")
        return v


class NetworkSpec(BaseModel):
    """Serializable description of a rooted weighted network"""
    model_config = ConfigDict(extra='forbid')

    generator: GeneratorKind = Field(..., description="Generator kind")
    params: GeneratorParams = Field(default_factory=GeneratorParams, description="Generator parameters")
    conductance: ConductanceSpec = Field(default_factory=ConductanceSpec, description="Conductance rule")
    root: Optional[Label] = Field(default=None, description="Root label; generator default when omitted")

    @field_validator('conductance', mode='before')
    @classmethod
    def conductance_shorthand(cls, v):
        if isinstance(v, str):
            return {'rule': v}
        return v

    def canonical_json(self) -> str:
        """Sorted-key JSON with defaults omitted; parsing it back reproduces the same text"""
        data = self.model_dump(mode='json', exclude_none=True, exclude_defaults=True)
        return json.dumps(data, sort_keys=True, separators=(',', ': '))

    def check(self) -> 'NetworkSpec':
        """
        Cross-field validation.

        Raises:
            NetworkSpecException: naming the offending field
        """
        g = self.generator
        p = self.params
        rule = self.conductance.rule

        if g in (GeneratorKind.LATTICE, GeneratorKind.PHI_PRODUCT_LATTICE):
            if p.d is None:
                raise NetworkSpecException("lattice dimension is required", field='params.d')
            if not 1 <= p.d <= 5:
                raise NetworkSpecException(f"lattice dimension must be in 1..5, got {p.d}", field='params.d')
        elif p.d is not None:
            raise NetworkSpecException(f"'d' is not a parameter of {g.value}", field='params.d')

        if g == GeneratorKind.PHI_PRODUCT_LATTICE:
            if p.truncation_radius is None or p.truncation_radius < 2:
                raise NetworkSpecException(
                    "phi-product lattices need truncation_radius >= 2", field='params.truncation_radius')
            if rule != ConductanceRule.PHI_PRODUCT:
                raise NetworkSpecException(
                    "phi-product lattices use the phi-product conductance rule", field='conductance.rule')
        elif rule == ConductanceRule.PHI_PRODUCT:
            raise NetworkSpecException(
                f"phi-product conductances require the phi-product-lattice generator, got {g.value}",
                field='conductance.rule')

        if g == GeneratorKind.REGULAR_TREE:
            if p.branching is None or p.branching < 2:
                raise NetworkSpecException("regular trees need branching >= 2", field='params.branching')
        elif rule == ConductanceRule.LEVEL_DECAY:
            raise NetworkSpecException(
                "level-decay conductances apply to regular trees only", field='conductance.rule')

        if g == GeneratorKind.EXPLICIT_EDGE_LIST:
            if not p.edges:
                raise NetworkSpecException("explicit networks need a nonempty edge list", field='params.edges')
            for i, edge in enumerate(p.edges):
                if len(edge) not in (2, 3):
                    raise NetworkSpecException(
                        f"edge {i} must be [u, v] or [u, v, c], got {edge}", field=f'params.edges.{i}')
                if edge[0] == edge[1]:
                    raise NetworkSpecException(f"edge {i} is a self-loop", field=f'params.edges.{i}')
                if len(edge) == 3:
                    if rule != ConductanceRule.PER_EDGE:
                        raise NetworkSpecException(
                            "weighted edges require the per-edge conductance rule", field='conductance.rule')
                    if not float(edge[2]) > 0:
                        raise NetworkSpecException(
                            f"edge {i} has non-positive conductance {edge[2]}", field=f'params.edges.{i}')

        if rule == ConductanceRule.PER_EDGE:
            for i, entry in enumerate(self.conductance.table or []):
                if len(entry) != 3 or not float(entry[2]) > 0:
                    raise NetworkSpecException(
                        f"table entry {i} must be [u, v, c] with c > 0, got {entry}",
                        field=f'conductance.table.{i}')
        return self


def _loc_to_field(loc) -> str:
    return '.'.join(str(part) for part in loc) or 'spec'


def parse_spec(data: Union[str, Dict[str, Any]]) -> NetworkSpec:
    """
    Parse and validate a spec from a JSON string or a dict.

    Raises:
        NetworkSpecException: on malformed JSON, schema errors or semantic errors
    """
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as e:
            raise NetworkSpecException(f"spec is not valid JSON: {e}", field='spec') from e
    try:
        spec = NetworkSpec.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise NetworkSpecException(
            f"{_loc_to_field(first['loc'])}: {first['msg']}",
            field=_loc_to_field(first['loc']),
            context={'errors': len(e.errors())},
        ) from e
    return spec.check()


def load_spec(path: Union[str, Path]) -> NetworkSpec:
    """Read a spec file"""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise NetworkSpecException(f"cannot read spec file {path}: {e}", field='net') from e
    return parse_spec(text)
