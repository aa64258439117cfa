import os

from setuptools import setup

ext_modules = []
if os.environ.get("ADE_PURE_PYTHON", "") in ("", "0"):
    try:
        import numpy as np
        import scipy.linalg.cython_blas  # noqa: F401  dgemm is cimported by the extension
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "adeqa.kernels._ckernels",
                    ["src/adeqa/kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # No Cython or scipy: the package runs on the numpy fallback.
        ext_modules = []

setup(ext_modules=ext_modules)
