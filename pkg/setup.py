import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "plnet._backend._core",
                ["src/plnet/_backend/_core.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython: ship pure Python, the package falls back at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
