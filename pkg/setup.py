"""Build the optional Cython kernel extension.

Installation still succeeds without Cython or a compiler; the package then
runs on the pure-Python kernels in ``canaltrace.kernels._fallback``.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("CANALTRACE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "canaltrace.kernels._core",
                    ["src/canaltrace/kernels/_core.pyx"],
                    include_dirs=[np.get_include()],
                    language="c++",
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
