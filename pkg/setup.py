from setuptools import setup, find_packages

setup(
    name="sham_meta",
    version="0.1.0",
    description="Hierarchical analysis of repeated sham-controlled experiments.",
    license="MIT",
    packages=find_packages(exclude=["tests"]),
    package_data={"sham_meta": ["data/*.csv"]},
    install_requires=["numpy", "scipy", "matplotlib", "arviz>=0.15,<1"],
    extras_require={"test": ["pytest"]},
)
