from setuptools import find_packages, setup
import re
from pathlib import Path


def file_getVersion(rel_path: str) -> str:
    """
    Retrieve the version string from the specified file.
    """
    version_file = Path(rel_path)
    if not version_file.exists():
        raise RuntimeError(f"Version file {rel_path} not found.")

    with open(version_file, "r") as f:
        code = f.read()
        match = re.search(r'__version__\s*:\s*Final\[str\]\s*=\s*"([^"]+)"', code)
        if not match:
            raise RuntimeError(f"Could not find __version__ in {rel_path}")
        return match.group(1)


setup(
    name="felo",
    version=file_getVersion("app/felo.py"),
    description="Deterministic simulator of feature/logit based federated learning "
    "across heterogeneous client models",
    author="FNNDSC",
    author_email="dev@babyMRI.org",
    url="https://github.com/FNNDSC/felo",
    packages=find_packages(include=["app", "app.*"]),
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.24",
        "pydantic>=2.0",
        "pydantic_settings>=2.0",
        "toml>=0.10.2",
        "loguru",
        "rich",
        "click>=8.1",
    ],
    license="MIT",
    entry_points={"console_scripts": ["felo = app.felo:run"]},
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    extras_require={"none": [], "dev": ["pytest~=7.1", "pytest-mock>=3.0.0", "coverage"]},
)
