import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("NLCODEC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "nlcodec._speedups",
                    ["src/nlcodec/_speedups.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: the dense kernel must round exactly like the numpy fallback
                    extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError as exc:
        print(f"building without compiled kernels: {exc}", file=sys.stderr)

setup(ext_modules=ext_modules)
