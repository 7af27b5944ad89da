"""Build the optional compiled kernel; the package works without it."""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DAAMPC_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:  # no build toolchain: numpy fallback only
        pass
    else:
        ext_modules = cythonize(
            [Extension(
                "daampc._fastcore",
                ["src/daampc/_fastcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )],
            compiler_directives={"language_level": 3},
        )

setup(ext_modules=ext_modules)
