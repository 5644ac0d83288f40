import numpy as np


def random_slater(rng, M, A):
    return rng.normal(size=(M, A)) + 1j * rng.normal(size=(M, A))


def orthonormal(rng, M, A):
    return np.linalg.qr(random_slater(rng, M, A))[0]


def random_mixed(rng, occupations):
    M = len(occupations)
    U = np.linalg.qr(random_slater(rng, M, M))[0]
    return (U * np.asarray(occupations)) @ U.conj().T
