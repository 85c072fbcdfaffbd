"""Build script: compiles the annealing kernel when a C toolchain is available.

The package works without the extension (a pure-Python kernel is selected at
import time), so compilation failures are downgraded to a warning rather than
aborting the install.
"""

import sys

from setuptools import Extension, setup


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("qubotrack: Cython unavailable, installing without the compiled kernel",
              file=sys.stderr)
        return []
    ext = Extension(
        "qubotrack._sa_core",
        sources=["src/qubotrack/_sa_core.pyx"],
        # No -ffast-math: the kernel must be bit-compatible with the
        # pure-Python fallback, which requires strict IEEE semantics.
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


try:
    setup(ext_modules=extensions())
except SystemExit:
    raise
except Exception as exc:  # missing compiler, broken headers, ...
    print(f"qubotrack: compiled kernel build failed ({exc}); "
          "retrying as pure Python", file=sys.stderr)
    setup(ext_modules=[])
