"""Build the compiled ADMM kernel when Cython and a C compiler are available.

The package still installs without them; the numpy implementation is then used.
"""

import os

import numpy as np
from setuptools import setup

ext_modules = []
if os.environ.get("HYBRIDMPC_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "hybridmpc.admm._ckernel",
                    ["src/hybridmpc/admm/_ckernel.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
