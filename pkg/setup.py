"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a NumPy twin of every kernel is
selected at import time), so a missing compiler or Cython only costs speed.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    # No -ffast-math: the extension must stay bit-identical to the NumPy twin.
    extensions = cythonize(
        [
            Extension(
                "forchflow._kernels_cy",
                ["src/forchflow/_kernels_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
