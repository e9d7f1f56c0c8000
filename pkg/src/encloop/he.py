"""Additively homomorphic encryption over the message space Z_q^n.

Two interchangeable backends:

* ``mock`` -- a transparent mod-q vector carried behind the ciphertext type.
  Bit-deterministic, unbounded horizon; the workhorse for long correctness
  runs where the crypto itself is not under test.

* ``lattice`` -- a Regev-style public-key LWE scheme whose plaintext space
  is natively Z_q (ciphertext modulus Q = q * 2^pad, messages scaled by
  Delta = 2^pad).  Sums and integer-matrix products of plaintexts wrap mod q
  for free.  Noise is tracked per ciphertext with a conservative budget
  model (additive for sums, absolute-row-sum weighted for matrix products)
  so decryption ambiguity is predicted, not discovered.

Parameters are sized for exactness within a declared workload, not for
conjectured security; this is a simulation artifact, not a hardened
cryptosystem.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple


class HEError(Exception):
    pass


class BadParamsError(HEError):
    pass


class OutOfRangeError(HEError):
    pass


class WrongKeyRoleError(HEError):
    pass


class NoiseOverflowError(HEError):
    pass


class DimensionMismatchError(HEError):
    pass


@dataclass(frozen=True)
class LatticeParams:
    """LWE dimensions: secret length, public-key sample count, per-sample noise
    magnitude, and pad_bits of headroom (Delta = 2^pad_bits)."""

    dimension: int = 16
    samples: int = 48
    noise: int = 4
    pad_bits: int = 64

    def __post_init__(self):
        if min(self.dimension, self.samples, self.pad_bits) < 1 or self.noise < 1:
            raise BadParamsError("lattice parameters must be positive")

    @property
    def fresh_noise_bound(self) -> int:
        # subset-sum over at most `samples` pk rows
        return self.samples * self.noise


@dataclass(frozen=True)
class SchemeParams:
    q: int
    backend: str = "mock"
    lattice: Optional[LatticeParams] = None

    def __post_init__(self):
        if self.q < 2:
            raise BadParamsError("plaintext modulus must be >= 2")
        if self.backend not in ("mock", "lattice"):
            raise BadParamsError(f"unknown backend {self.backend!r}")
        if self.backend == "lattice" and self.lattice is None:
            object.__setattr__(self, "lattice", LatticeParams())

    @classmethod
    def mock(cls, q: int) -> "SchemeParams":
        return cls(q=q, backend="mock")

    @classmethod
    def lattice_for_budget(cls, q: int, noise_budget_log2: int, *,
                           dimension: int = 16, samples: int = 48,
                           noise: int = 4) -> "SchemeParams":
        """Size pad_bits so the declared workload's noise (given in log2) decrypts exactly."""
        lp = LatticeParams(dimension=dimension, samples=samples, noise=noise,
                           pad_bits=noise_budget_log2 + 2)
        return cls(q=q, backend="lattice", lattice=lp)

    @property
    def ct_modulus(self) -> int:
        if self.backend != "lattice":
            raise BadParamsError("ct_modulus only defined for the lattice backend")
        return self.q << self.lattice.pad_bits

    @property
    def delta(self) -> int:
        return 1 << self.lattice.pad_bits


@dataclass(frozen=True)
class KeyMaterial:
    role: str  # "public" | "full"
    params: SchemeParams
    payload: tuple = ()

    def require_full(self):
        if self.role != "full":
            raise WrongKeyRoleError("decryption requires the full key")


@dataclass
class Ciphertext:
    """Opaque encrypted vector; op counters and the noise bound only grow."""

    params: SchemeParams
    dim: int
    payload: tuple
    adds: int = 0
    pmults: int = 0
    noise_bound: int = 0

    def _compatible(self, other: "Ciphertext"):
        if self.params is not other.params and self.params != other.params:
            raise DimensionMismatchError("ciphertexts from different schemes")
        if self.dim != other.dim:
            raise DimensionMismatchError(f"dimension {self.dim} vs {other.dim}")


def keygen(params: SchemeParams, seed: Optional[int] = None):
    """Returns (public KeyMaterial, full KeyMaterial); deterministic under a seed."""
    if params.backend == "mock":
        pk = KeyMaterial("public", params)
        sk = KeyMaterial("full", params)
        return pk, sk
    rng = random.Random(seed)
    lp = params.lattice
    Q = params.ct_modulus
    s = tuple(rng.randrange(Q) for _ in range(lp.dimension))
    A = tuple(
        tuple(rng.randrange(Q) for _ in range(lp.dimension)) for _ in range(lp.samples)
    )
    b = tuple(
        (sum(a_j * s_j for a_j, s_j in zip(row, s))
         + rng.randint(-lp.noise, lp.noise)) % Q
        for row in A
    )
    pk = KeyMaterial("public", params, (A, b))
    sk = KeyMaterial("full", params, (A, b, s))
    return pk, sk


def _check_plain(v: Sequence[int], q: int):
    for x in v:
        if not isinstance(x, int) or not (0 <= x < q):
            raise OutOfRangeError(f"plaintext entry {x!r} outside Z_{q}")


def encrypt(pk: KeyMaterial, v: Sequence[int], rng: Optional[random.Random] = None) -> Ciphertext:
    params = pk.params
    _check_plain(v, params.q)
    if params.backend == "mock":
        return Ciphertext(params, len(v), tuple(v))
    rng = rng if rng is not None else random.Random()
    lp = params.lattice
    Q, delta = params.ct_modulus, params.delta
    A, b = pk.payload[0], pk.payload[1]
    comps = []
    for x in v:
        rows = [i for i in range(lp.samples) if rng.getrandbits(1)]
        a = [0] * lp.dimension
        c = delta * x
        for i in rows:
            ai = A[i]
            for j in range(lp.dimension):
                a[j] += ai[j]
            c += b[i]
        comps.append((tuple(aj % Q for aj in a), c % Q))
    return Ciphertext(params, len(v), tuple(comps),
                      noise_bound=lp.fresh_noise_bound)


def decrypt(sk: KeyMaterial, ct: Ciphertext) -> Tuple[int, ...]:
    sk.require_full()
    params = ct.params
    if params != sk.params:
        raise DimensionMismatchError("key/ciphertext scheme mismatch")
    if params.backend == "mock":
        return tuple(ct.payload)
    lp = params.lattice
    Q, delta = params.ct_modulus, params.delta
    if ct.noise_bound >= delta // 2:
        raise NoiseOverflowError(
            f"noise bound 2^{ct.noise_bound.bit_length()} exceeds half-Delta "
            f"2^{lp.pad_bits - 1}; decryption would be ambiguous"
        )
    s = sk.payload[2]
    out = []
    for a, c in ct.payload:
        d = (c - sum(a_j * s_j for a_j, s_j in zip(a, s))) % Q
        out.append(((d + delta // 2) // delta) % params.q)
    return tuple(out)


def add(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    c1._compatible(c2)
    params = c1.params
    if params.backend == "mock":
        payload = tuple((x + y) % params.q for x, y in zip(c1.payload, c2.payload))
    else:
        Q = params.ct_modulus
        payload = tuple(
            (tuple((x + y) % Q for x, y in zip(a1, a2)), (b1 + b2) % Q)
            for (a1, b1), (a2, b2) in zip(c1.payload, c2.payload)
        )
    return Ciphertext(params, c1.dim, payload,
                      adds=c1.adds + c2.adds + 1,
                      pmults=c1.pmults + c2.pmults,
                      noise_bound=c1.noise_bound + c2.noise_bound)


def plain_matmul(M: Sequence[Sequence[int]], ct: Ciphertext) -> Ciphertext:
    """M is an integer matrix (caller reduces mod q); decrypts to M v mod q."""
    params = ct.params
    rows = len(M)
    if rows == 0:
        raise DimensionMismatchError("empty matrix")
    if any(len(r) != ct.dim for r in M):
        raise DimensionMismatchError("matrix columns must match ciphertext dimension")
    weight = max(sum(abs(x) for x in row) for row in M)
    noise = ct.noise_bound * weight
    if params.backend == "mock":
        payload = tuple(
            sum(m * x for m, x in zip(row, ct.payload)) % params.q for row in M
        )
    else:
        if noise >= params.delta // 2:
            raise NoiseOverflowError(
                "matrix product pushes the noise bound past the declared budget"
            )
        Q = params.ct_modulus
        payload = []
        for row in M:
            a = [0] * params.lattice.dimension
            c = 0
            for m, (aj, bj) in zip(row, ct.payload):
                if m == 0:
                    continue
                for k in range(params.lattice.dimension):
                    a[k] += m * aj[k]
                c += m * bj
            payload.append((tuple(x % Q for x in a), c % Q))
        payload = tuple(payload)
    return Ciphertext(params, rows, payload,
                      adds=ct.adds, pmults=ct.pmults + 1, noise_bound=noise)


@dataclass(frozen=True)
class NoiseReport:
    """Remaining-operation estimate.  headroom > 0 guarantees exact decryption,
    headroom < 0 guarantees refusal; 0 is the boundary bit.  Infinite on the
    mock backend."""

    noise_bound_log2: float
    budget_log2: float
    headroom_log2: float


def noise_report(ct: Ciphertext) -> NoiseReport:
    if ct.params.backend == "mock":
        return NoiseReport(0.0, float("inf"), float("inf"))
    budget = float(ct.params.lattice.pad_bits - 1)
    nb = float(ct.noise_bound.bit_length())
    return NoiseReport(nb, budget, budget - nb)


# -- serialization -------------------------------------------------------


def plain_vector_to_json(v: Sequence[int]) -> list:
    """Z_q vectors travel as decimal-integer strings (JSON numbers would lose
    precision past 2^53)."""
    return [str(int(x)) for x in v]


def plain_vector_from_json(obj, q: int) -> Tuple[int, ...]:
    vals = tuple(int(x) for x in obj)
    _check_plain(vals, q)
    return vals


_TAGS = {"mock": 0, "lattice": 1}
_BACKENDS = {v: k for k, v in _TAGS.items()}


def _pack_int(x: int) -> bytes:
    raw = x.to_bytes((x.bit_length() + 7) // 8 or 1, "big")
    return struct.pack(">I", len(raw)) + raw


def _unpack_int(buf: bytes, off: int):
    (n,) = struct.unpack_from(">I", buf, off)
    off += 4
    return int.from_bytes(buf[off : off + n], "big"), off + n


def ciphertext_to_bytes(ct: Ciphertext) -> bytes:
    parts = [struct.pack(">BI", _TAGS[ct.params.backend], ct.dim)]
    if ct.params.backend == "mock":
        for x in ct.payload:
            parts.append(_pack_int(x))
    else:
        for a, c in ct.payload:
            parts.append(struct.pack(">I", len(a)))
            for x in a:
                parts.append(_pack_int(x))
            parts.append(_pack_int(c))
    return b"".join(parts)


def ciphertext_from_bytes(buf: bytes, params: SchemeParams) -> Ciphertext:
    tag, dim = struct.unpack_from(">BI", buf, 0)
    if _BACKENDS.get(tag) != params.backend:
        raise BadParamsError("backend tag does not match scheme parameters")
    off = 5
    if params.backend == "mock":
        payload = []
        for _ in range(dim):
            x, off = _unpack_int(buf, off)
            payload.append(x)
        return Ciphertext(params, dim, tuple(payload))
    comps = []
    for _ in range(dim):
        (klen,) = struct.unpack_from(">I", buf, off)
        off += 4
        a = []
        for _ in range(klen):
            x, off = _unpack_int(buf, off)
            a.append(x)
        c, off = _unpack_int(buf, off)
        comps.append((tuple(a), c))
    return Ciphertext(params, dim, tuple(comps),
                      noise_bound=params.lattice.fresh_noise_bound)
