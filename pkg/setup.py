#!/usr/bin/env python3
"""
Setup script for the Microstructure Toughness Optimizer

Handles installation checks, directories and the default configuration.
"""

import shutil
import sys
from pathlib import Path


def setup():
    """Main setup function"""
    print("🧱 Microstructure Toughness Optimizer Setup")
    print("=" * 60)

    # Check Python version
    if sys.version_info < (3, 12):
        print("❌ Python 3.12+ required")
        sys.exit(1)
    print(f"✓ Python {sys.version_info.major}.{sys.version_info.minor}")

    project_dir = Path(__file__).parent

    print("\nChecking numerical stack...")
    missing = []
    for module in ("numpy", "scipy", "shapely", "pandas", "yaml", "tenacity", "colorlog"):
        try:
            __import__(module)
            print(f"✓ {module}")
        except ImportError:
            missing.append(module)
            print(f"⚠️  {module} not installed")
    if missing:
        print("   Install them: pip install -r requirements.txt")

    print("\nSetting up directories...")
    config_dir = project_dir / "config"
    config_dir.mkdir(exist_ok=True)
    for name in ("logs", "output"):
        (project_dir / name).mkdir(exist_ok=True)
        print(f"✓ Created {name} directory")

    # Create .env from example if not exists
    env_file = project_dir / ".env"
    env_example = project_dir / ".env.example"
    if not env_file.exists() and env_example.exists():
        shutil.copy(env_example, env_file)
        print("✓ Created .env from template")

    config_file = config_dir / "microstructure_config.yaml"
    if not config_file.exists():
        sys.path.insert(0, str(project_dir / "src"))
        from run_config import RunConfig, save_config

        save_config(RunConfig(), config_file)
        print("✓ Created default microstructure_config.yaml")

    print("\n" + "=" * 60)
    print("✅ Setup complete!")
    print("\nNext steps:")
    print("1. Install dependencies: pip install -r requirements.txt")
    print("2. Homogeneous check: python src/microstructure_manager.py simulate --set domain.inclusions=false")
    print("3. Campaign: python src/microstructure_manager.py optimize --workers 4")
    print("4. Tests: pytest (add --runslow for the long surfing runs)")
    print("=" * 60)


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == "install":
        setup()
    elif len(sys.argv) > 1:
        # Invoked by a PEP 517 frontend (egg_info, dist_info, editable_wheel, ...):
        # package metadata lives in pyproject.toml.
        import setuptools

        setuptools.setup()
    else:
        print("Usage: python setup.py install")
        sys.exit(1)
