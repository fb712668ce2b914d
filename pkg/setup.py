from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh
                    if line.strip() and not line.startswith("#") and not line.startswith(("coverage", "pylint"))]

setup(
    name="soundscape-classifier",
    version="1.0",
    author="Soundscape Classifier contributors",
    description="Bird call detection in long soundscape recordings",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: OS Independent",
    ],
    packages=["soundscape", "sound_classifier", "sound_classifier.bird", "sound_classifier.binary"],
    py_modules=["soundscape_cli"],
    install_requires=requirements,
    entry_points={"console_scripts": ["soundscape=soundscape_cli:main"]},
    python_requires=">=3.8",
)
