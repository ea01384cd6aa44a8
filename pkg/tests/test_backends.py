import numpy as np

from gen import random_model
from ttc import circuit as cm
from ttc import engine
from ttc.backends import IdentityBackend, evaluate_split


def test_identity_backend_matches_engine():
    rng = np.random.default_rng(0)
    for _ in range(3):
        m = random_model(rng)
        c = cm.compile_model(m)
        backend = IdentityBackend()
        for _ in range(10):
            x = rng.integers(0, 2, c.input_size)
            partials = evaluate_split(c, x, backend)
            expect = engine.eval_cleartext(c, x)
            assert np.array_equal(partials, expect.partials)


def test_backend_ops_compose():
    backend = IdentityBackend()
    handles = backend.encode([1, 0, 1])
    assert backend.decode(handles) == [1, 0, 1]
    table = np.array([0, 0, 0, 0, 0, 1, 0, 0], dtype=np.uint8)  # fires on index 5
    assert backend.lut_apply(table, backend.encode([1, 0, 1])) == 1
    assert backend.lut_apply(table, backend.encode([1, 1, 1])) == 0
    assert backend.add(backend.encode([2])[0], backend.encode([3])[0]) == 5
