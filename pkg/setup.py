import os

import numpy as np
from setuptools import Extension, setup

# PRIORMF_NO_EXT=1 builds the pure-Python package only; the kernels then
# fall back to the numpy implementation at import.
ext_modules = []
if not os.environ.get("PRIORMF_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "priormf._ckernels",
                ["src/priormf/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
