"""Static element table: symbols, Pauling electronegativities, common oxidation
states and a metal flag for Z = 1..94.

Electronegativities follow the usual Pauling tabulation (He, Ne, Ar have no
value). Oxidation states are the common states of standard inorganic tables,
capped at 8 per element.
"""

from __future__ import annotations

import math

__all__ = [
    "MAX_Z",
    "SYMBOLS",
    "UnsupportedElementError",
    "symbol",
    "atomic_number",
    "electronegativity",
    "oxidation_states",
    "is_metal",
    "en_sort_key",
]

MAX_Z = 94

SYMBOLS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni "
    "Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I "
    "Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt "
    "Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu"
).split()

# fmt: off
_PAULING = (
    2.20, None, 0.98, 1.57, 2.04, 2.55, 3.04, 3.44, 3.98, None,  # H..Ne
    0.93, 1.31, 1.61, 1.90, 2.19, 2.58, 3.16, None,              # Na..Ar
    0.82, 1.00, 1.36, 1.54, 1.63, 1.66, 1.55, 1.83, 1.88, 1.91,  # K..Ni
    1.90, 1.65, 1.81, 2.01, 2.18, 2.55, 2.96, 3.00,              # Cu..Kr
    0.82, 0.95, 1.22, 1.33, 1.60, 2.16, 1.90, 2.20, 2.28, 2.20,  # Rb..Pd
    1.93, 1.69, 1.78, 1.96, 2.05, 2.10, 2.66, 2.60,              # Ag..Xe
    0.79, 0.89, 1.10, 1.12, 1.13, 1.14, 1.13, 1.17, 1.20, 1.20,  # Cs..Gd
    1.10, 1.22, 1.23, 1.24, 1.25, 1.10, 1.27,                    # Tb..Lu
    1.30, 1.50, 2.36, 1.90, 2.20, 2.20, 2.28, 2.54, 2.00,        # Hf..Hg
    1.62, 2.33, 2.02, 2.00, 2.20, 2.20,                          # Tl..Rn
    0.70, 0.90, 1.10, 1.30, 1.50, 1.38, 1.36, 1.28,              # Fr..Pu
)

_OXIDATION = {
    "H": (-1, 1), "He": (), "Li": (1,), "Be": (2,), "B": (3,), "C": (-4, 2, 4),
    "N": (-3, 3, 5), "O": (-2,), "F": (-1,), "Ne": (), "Na": (1,), "Mg": (2,),
    "Al": (3,), "Si": (-4, 4), "P": (-3, 3, 5), "S": (-2, 2, 4, 6),
    "Cl": (-1, 1, 3, 5, 7), "Ar": (), "K": (1,), "Ca": (2,), "Sc": (3,),
    "Ti": (2, 3, 4), "V": (2, 3, 4, 5), "Cr": (2, 3, 6), "Mn": (2, 3, 4, 7),
    "Fe": (2, 3), "Co": (2, 3), "Ni": (2, 3), "Cu": (1, 2), "Zn": (2,),
    "Ga": (3,), "Ge": (-4, 2, 4), "As": (-3, 3, 5), "Se": (-2, 2, 4, 6),
    "Br": (-1, 1, 3, 5), "Kr": (2,), "Rb": (1,), "Sr": (2,), "Y": (3,),
    "Zr": (4,), "Nb": (3, 5), "Mo": (4, 6), "Tc": (4, 7), "Ru": (3, 4),
    "Rh": (3,), "Pd": (2, 4), "Ag": (1,), "Cd": (2,), "In": (3,),
    "Sn": (-4, 2, 4), "Sb": (-3, 3, 5), "Te": (-2, 2, 4, 6),
    "I": (-1, 1, 3, 5, 7), "Xe": (2, 4, 6), "Cs": (1,), "Ba": (2,), "La": (3,),
    "Ce": (3, 4), "Pr": (3,), "Nd": (3,), "Pm": (3,), "Sm": (2, 3),
    "Eu": (2, 3), "Gd": (3,), "Tb": (3, 4), "Dy": (3,), "Ho": (3,), "Er": (3,),
    "Tm": (3,), "Yb": (2, 3), "Lu": (3,), "Hf": (4,), "Ta": (5,), "W": (4, 6),
    "Re": (4, 7), "Os": (4,), "Ir": (3, 4), "Pt": (2, 4), "Au": (1, 3),
    "Hg": (1, 2), "Tl": (1, 3), "Pb": (2, 4), "Bi": (3,), "Po": (-2, 2, 4),
    "At": (-1, 1), "Rn": (2,), "Fr": (1,), "Ra": (2,), "Ac": (3,), "Th": (4,),
    "Pa": (5,), "U": (3, 4, 6), "Np": (5,), "Pu": (3, 4),
}
# fmt: on

_NONMETALS = frozenset(
    "H He B C N O F Ne Si P S Cl Ar Ge As Se Br Kr Sb Te I Xe At Rn".split()
)

_Z_BY_SYMBOL = {s: i + 1 for i, s in enumerate(SYMBOLS)}


class UnsupportedElementError(ValueError):
    """Raised for atomic numbers or symbols outside the embedded table."""


def _check(z: int) -> int:
    z = int(z)
    if not 1 <= z <= MAX_Z:
        raise UnsupportedElementError(f"atomic number {z} outside 1..{MAX_Z}")
    return z


def symbol(z: int) -> str:
    return SYMBOLS[_check(z) - 1]


def atomic_number(sym: str) -> int:
    try:
        return _Z_BY_SYMBOL[sym]
    except KeyError:
        raise UnsupportedElementError(f"unknown element symbol {sym!r}") from None


def electronegativity(z: int) -> float | None:
    """Pauling electronegativity, or None where no value is tabulated."""
    return _PAULING[_check(z) - 1]


def oxidation_states(z: int) -> tuple[int, ...]:
    return _OXIDATION[symbol(z)]


def is_metal(z: int) -> bool:
    return symbol(z) not in _NONMETALS


def en_sort_key(z: int) -> tuple[float, int]:
    """Ascending-electronegativity key with atomic-number tie-break.

    Elements without a tabulated value sort after every tabulated element.
    """
    en = electronegativity(z)
    return (math.inf if en is None else en, int(z))
