"""CMake-driven build of the noisesep Python extension.

The extension target lives in the top-level CMakeLists.txt; this wrapper
configures a scratch build tree, builds the `noisesep_python` target, and
drops the resulting `_core` module where setuptools expects it (the package
source dir for editable installs).  Install with:

    pip install -e . --no-build-isolation
"""

import shutil
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp).resolve() / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)

        subprocess.run(
            [
                "cmake",
                "-S", str(source_dir),
                "-B", str(build_dir),
                "-DCMAKE_BUILD_TYPE=Release",
                f"-DPython_EXECUTABLE={sys.executable}",
                f"-DPython3_EXECUTABLE={sys.executable}",
            ],
            check=True,
        )
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "noisesep_python"],
            check=True,
        )

        built = sorted((build_dir / "python" / "noisesep").glob("_core*"))
        if not built:
            raise RuntimeError("CMake did not produce the _core module")
        target = Path(self.get_ext_fullpath(ext.name)).resolve()
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(built[-1], target)


setup(
    packages=["noisesep"],
    package_dir={"": "python"},
    ext_modules=[CMakeExtension("noisesep._core")],
    cmdclass={"build_ext": CMakeBuild},
    zip_safe=False,
)
