"""Build script for the optional compiled kernels.

The package works without them: ``cfair.kernels`` falls back to the numpy
implementation when ``cfair._ckernels`` cannot be imported.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("CF_NO_EXTENSION") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "cfair._ckernels",
                    ["src/cfair/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError as exc:  # pragma: no cover - build-time only
        print(f"cfair: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
