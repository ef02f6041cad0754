import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the numpy fallback is used
    cythonize = None

# No FMA contraction or reassociation: keeps distances bit-identical to the numpy fallback.
compile_args = ["-O3", "-ffp-contract=off"]
if os.environ.get("TRACKMINE_NATIVE", "1") == "1":
    compile_args.append("-march=native")

ext_modules = []
if cythonize is not None and os.environ.get("TRACKMINE_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "trackmine.discovery._kernels",
                ["src/trackmine/discovery/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=compile_args,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
