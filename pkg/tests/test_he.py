import random

import pytest

from encloop import he

Q41 = 2**41


def make_scheme(backend, q=Q41, pad=64):
    if backend == "mock":
        return he.SchemeParams.mock(q)
    return he.SchemeParams(q=q, backend="lattice",
                           lattice=he.LatticeParams(dimension=8, samples=24,
                                                    noise=3, pad_bits=pad))


@pytest.fixture(params=["mock", "lattice"])
def scheme(request):
    return make_scheme(request.param)


@pytest.fixture
def keys(scheme):
    return he.keygen(scheme, seed=42)


def test_roundtrip_zero_and_wrap_boundary(scheme, keys):
    pk, sk = keys
    rng = random.Random(0)
    for v in ([0, 0, 0], [scheme.q - 1, 0, scheme.q - 1]):
        assert he.decrypt(sk, he.encrypt(pk, v, rng)) == tuple(v)


def test_roundtrip_random(scheme, keys):
    pk, sk = keys
    rng = random.Random(1)
    for _ in range(200):
        v = [rng.randrange(scheme.q) for _ in range(rng.randint(1, 4))]
        assert he.decrypt(sk, he.encrypt(pk, v, rng)) == tuple(v)


def test_add_wraps_mod_q(scheme, keys):
    pk, sk = keys
    rng = random.Random(2)
    c1 = he.encrypt(pk, [1], rng)
    c2 = he.encrypt(pk, [scheme.q - 1], rng)
    assert he.decrypt(sk, he.add(c1, c2)) == (0,)


def test_add_identity_and_random_pairs(scheme, keys):
    pk, sk = keys
    rng = random.Random(3)
    for _ in range(100):
        n = rng.randint(1, 3)
        p1 = [rng.randrange(scheme.q) for _ in range(n)]
        p2 = [rng.randrange(scheme.q) for _ in range(n)]
        got = he.decrypt(sk, he.add(he.encrypt(pk, p1, rng), he.encrypt(pk, p2, rng)))
        assert got == tuple((a + b) % scheme.q for a, b in zip(p1, p2))
    c = he.encrypt(pk, [5, 6], rng)
    z = he.encrypt(pk, [0, 0], rng)
    assert he.decrypt(sk, he.add(c, z)) == (5, 6)


def test_plain_matmul_identity_zero_random(scheme, keys):
    pk, sk = keys
    rng = random.Random(4)
    v = [7, 9, 11]
    c = he.encrypt(pk, v, rng)
    eye = [[1 if i == j else 0 for j in range(3)] for i in range(3)]
    assert he.decrypt(sk, he.plain_matmul(eye, c)) == tuple(v)
    zero = [[0] * 3 for _ in range(2)]
    assert he.decrypt(sk, he.plain_matmul(zero, c)) == (0, 0)
    for _ in range(50):
        n, m = rng.randint(1, 3), rng.randint(1, 3)
        M = [[rng.randrange(scheme.q) for _ in range(n)] for _ in range(m)]
        p = [rng.randrange(scheme.q) for _ in range(n)]
        got = he.decrypt(sk, he.plain_matmul(M, he.encrypt(pk, p, rng)))
        want = tuple(sum(a * b for a, b in zip(row, p)) % scheme.q for row in M)
        assert got == want


def test_dimension_mismatch(scheme, keys):
    pk, sk = keys
    rng = random.Random(5)
    c1 = he.encrypt(pk, [1, 2], rng)
    c2 = he.encrypt(pk, [1], rng)
    with pytest.raises(he.DimensionMismatchError):
        he.add(c1, c2)
    with pytest.raises(he.DimensionMismatchError):
        he.plain_matmul([[1, 2, 3]], c1)


def test_out_of_range_rejected(scheme, keys):
    pk, _ = keys
    with pytest.raises(he.OutOfRangeError):
        he.encrypt(pk, [scheme.q])
    with pytest.raises(he.OutOfRangeError):
        he.encrypt(pk, [-1])


def test_public_key_cannot_decrypt(scheme, keys):
    pk, _ = keys
    c = he.encrypt(pk, [1], random.Random(6))
    with pytest.raises(he.WrongKeyRoleError):
        he.decrypt(pk, c)


def test_keygen_deterministic_under_seed():
    params = make_scheme("lattice")
    a = he.keygen(params, seed=7)
    b = he.keygen(params, seed=7)
    assert a[1].payload == b[1].payload
    c = he.keygen(params, seed=8)
    assert c[1].payload != a[1].payload


def test_lattice_ciphertexts_randomized():
    params = make_scheme("lattice")
    pk, _ = he.keygen(params, seed=9)
    rng = random.Random(10)
    seen = {he.encrypt(pk, [3], rng).payload for _ in range(100)}
    assert len(seen) == 100


def test_mock_bit_deterministic():
    params = make_scheme("mock")
    pk, sk = he.keygen(params, seed=0)
    c1 = he.encrypt(pk, [5, 7])
    c2 = he.encrypt(pk, [5, 7])
    assert c1.payload == c2.payload


def test_op_metadata_monotone(scheme, keys):
    pk, _ = keys
    rng = random.Random(11)
    c = he.encrypt(pk, [1, 2], rng)
    d = he.add(c, c)
    e = he.plain_matmul([[1, 1], [0, 1]], d)
    assert d.adds == 1 and e.adds == 1 and e.pmults == 1
    assert e.noise_bound >= d.noise_bound >= 0


def test_declared_budget_of_thousand_adds():
    # q = 2^41 with 10^3 additions stays within a budget sized for it
    params = he.SchemeParams.lattice_for_budget(Q41, noise_budget_log2=24,
                                                dimension=8, samples=24, noise=3)
    pk, sk = he.keygen(params, seed=12)
    rng = random.Random(12)
    acc = he.encrypt(pk, [1], rng)
    for _ in range(999):
        acc = he.add(acc, he.encrypt(pk, [1], rng))
    assert he.noise_report(acc).headroom_log2 > 0
    assert he.decrypt(sk, acc) == (1000 % Q41,)


def test_noise_overflow_predicted_and_raised():
    params = make_scheme("lattice", q=2**10, pad=16)
    pk, sk = he.keygen(params, seed=13)
    rng = random.Random(13)
    # additions alone can exhaust the budget; negative headroom predicts refusal
    c = he.encrypt(pk, [1], rng)
    while he.noise_report(c).headroom_log2 >= 0:
        c = he.add(c, c)
    with pytest.raises(he.NoiseOverflowError):
        he.decrypt(sk, c)
    # a heavy plaintext weight trips the budget check at the operation itself
    fresh = he.encrypt(pk, [1], rng)
    with pytest.raises(he.NoiseOverflowError):
        he.plain_matmul([[2**12]], fresh)


def test_serialization_roundtrip(scheme, keys):
    pk, sk = keys
    rng = random.Random(14)
    c = he.encrypt(pk, [3, 1, 4], rng)
    blob = he.ciphertext_to_bytes(c)
    back = he.ciphertext_from_bytes(blob, scheme)
    assert he.decrypt(sk, back) == (3, 1, 4)


def test_serialization_backend_tag_checked():
    mock = make_scheme("mock")
    lat = make_scheme("lattice")
    pk, _ = he.keygen(mock, seed=0)
    blob = he.ciphertext_to_bytes(he.encrypt(pk, [1]))
    with pytest.raises(he.BadParamsError):
        he.ciphertext_from_bytes(blob, lat)


def test_plain_vector_json_roundtrip():
    v = (0, 2**60, 5)
    obj = he.plain_vector_to_json(v)
    assert obj == ["0", str(2**60), "5"]
    assert he.plain_vector_from_json(obj, q=2**61) == v
    with pytest.raises(he.OutOfRangeError):
        he.plain_vector_from_json(["8"], q=8)


def test_bad_params_rejected():
    with pytest.raises(he.BadParamsError):
        he.SchemeParams(q=1)
    with pytest.raises(he.BadParamsError):
        he.SchemeParams(q=8, backend="nope")
    with pytest.raises(he.BadParamsError):
        he.LatticeParams(dimension=0)
