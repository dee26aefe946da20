import os

import numpy as np
from setuptools import Extension, setup

# REPLAYNET_NO_EXT=1 skips the compiled kernels; the package then runs on the
# pure-Python fallback.
ext_modules = []
if not os.environ.get("REPLAYNET_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "replaynet._kernels",
                ["src/replaynet/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
