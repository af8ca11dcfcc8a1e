#!/usr/bin/env python3
"""
Environment bootstrap for PADMM Lab.

Creates an environment with pip, Poetry or uv (first one that works) and runs
the bundled SCAD example through ``padmm verify`` as a smoke check.
"""

import os
import subprocess
import sys
from typing import Callable, List, Tuple

SMOKE_CONFIG = os.path.join("config", "examples", "scad_regression.json")


def run_command(command: str) -> Tuple[bool, str]:
    """Run a shell command, echo a status line and return (ok, output)."""
    try:
        result = subprocess.run(command, shell=True, check=True, capture_output=True, text=True)
        print(f"✅ {command}")
        return True, result.stdout
    except subprocess.CalledProcessError as e:
        print(f"❌ {command}")
        print(f"Error: {e.stderr or e.stdout}")
        return False, e.stderr


def check_python_version() -> bool:
    version = sys.version_info
    if (version.major, version.minor) >= (3, 9):
        print(f"✅ Python {version.major}.{version.minor}.{version.micro} is compatible")
        return True
    print(f"❌ Python {version.major}.{version.minor}.{version.micro} is too old. Need 3.9+")
    return False


def venv_python() -> str:
    if os.name == "nt":
        return r".\venv\Scripts\python"
    return "venv/bin/python"


def setup_with_pip() -> Tuple[bool, str]:
    print("\n🐍 Setting up with pip and a virtual environment...")
    if not os.path.exists("venv"):
        ok, _ = run_command(f"{sys.executable} -m venv venv")
        if not ok:
            return False, ""
    python = venv_python()
    for cmd in (f"{python} -m pip install --upgrade pip", f"{python} -m pip install -e .[dev,test]"):
        ok, _ = run_command(cmd)
        if not ok:
            return False, ""
    return True, python


def setup_with_poetry() -> Tuple[bool, str]:
    print("\n🎭 Setting up with Poetry...")
    ok, _ = run_command("poetry --version")
    if not ok:
        print("❌ Poetry not found: https://python-poetry.org/docs/#installation")
        return False, ""
    ok, _ = run_command("poetry install")
    return ok, "poetry run python"


def setup_with_uv() -> Tuple[bool, str]:
    print("\n⚡ Setting up with uv...")
    ok, _ = run_command("uv --version")
    if not ok:
        print("❌ uv not found: https://docs.astral.sh/uv/")
        return False, ""
    ok, _ = run_command("uv pip install -e .[dev,test]")
    return ok, "python"


def smoke_check(python: str) -> bool:
    """Solve and verify the bundled SCAD regression example."""
    print("\n🧪 Verifying the SCAD regression example...")
    ok, output = run_command(f"{python} -m apps.cli verify {SMOKE_CONFIG}")
    if ok:
        print(output.strip().splitlines()[-1] if output.strip() else "")
    return ok


def main() -> None:
    print("🚀 PADMM Lab Setup")
    print("=" * 50)

    if not check_python_version():
        sys.exit(1)

    setup_methods: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
        ("pip", setup_with_pip),
        ("poetry", setup_with_poetry),
        ("uv", setup_with_uv),
    ]

    for name, setup_func in setup_methods:
        try:
            ok, python = setup_func()
        except Exception as e:
            print(f"❌ Setup with {name} failed: {e}")
            continue
        if not ok:
            continue
        print(f"\n✅ Dependencies installed with {name}!")
        if not smoke_check(python):
            print("⚠️ Installed, but the example verification did not pass")
        print("\nNext steps:")
        print("1. padmm run config/examples/scad_regression.json")
        print("2. padmm verify config/examples/slr.json")
        print("3. padmm rate runs/scad_trace.csv")
        return

    print("\n❌ All setup methods failed. Please check the errors above.")
    sys.exit(1)


if __name__ == "__main__":
    main()
