import os
import platform
from ctypes.util import find_library

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("ZSNMT_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        compile_args = ["-O3"]
        link_args = []
        # glibc's vector math library lets gcc vectorize the gate nonlinearities
        if platform.system() == "Linux" and platform.machine() == "x86_64" and find_library("mvec"):
            compile_args.append("-ffast-math")
            link_args.append("-lmvec")
        ext_modules = cythonize(
            [
                Extension(
                    "zsnmt.numcore._kernels",
                    ["src/zsnmt/numcore/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=compile_args,
                    extra_link_args=link_args,
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
