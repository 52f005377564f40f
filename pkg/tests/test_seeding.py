import numpy as np

from bisimlab._seeding import derive_seed, make_rng


def test_derivation_is_stable_and_label_sensitive():
    assert derive_seed(7, "mdp") == derive_seed(7, "mdp")
    assert derive_seed(7, "mdp") != derive_seed(7, "policy")
    assert derive_seed(7, "mdp") != derive_seed(8, "mdp")
    assert 0 <= derive_seed(2**64 - 1, 3) < 2**64


def test_known_value():
    # BLAKE2b-64 of b"0/mdp", little endian; pins the documented derivation
    import hashlib

    ref = int.from_bytes(hashlib.blake2b(b"0/mdp", digest_size=8).digest(), "little")
    assert derive_seed(0, "mdp") == ref


def test_streams_reproduce():
    assert np.array_equal(make_rng(5).random(4), make_rng(5).random(4))
