"""Sphinx configuration file for the nzpart documentation.

The documentation is generated from the README.md file in the root of the repository.
The README.md file is copied to the Sphinx source directory, relative links to
`example/` files are replaced with links into the repository, the top-level
header is replaced and an index file pointing at it and at the API reference
is written.
"""

from __future__ import annotations

import os
import re
import sys
import textwrap
from pathlib import Path

package_path = Path("../..").resolve()
sys.path.insert(0, str(package_path))
PYTHON_PATH = os.environ.get("PYTHONPATH", "")
os.environ["PYTHONPATH"] = f"{package_path}:{PYTHON_PATH}"

docs_path = Path("..").resolve()
sys.path.insert(1, str(docs_path))

import nzpart  # noqa: E402

project = "nzpart"
copyright = "2026, nzpart developers"  # noqa: A001
author = "nzpart developers"

version = nzpart.__version__
release = nzpart.__version__

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.autosectionlabel",
    "sphinx.ext.intersphinx",
    "sphinx.ext.viewcode",
    "sphinx.ext.napoleon",
    "myst_parser",
    "sphinx_autodoc_typehints",
]

autosectionlabel_maxdepth = 5
myst_heading_anchors = 0
templates_path = ["_templates"]
source_suffix = [".rst", ".md"]
master_doc = "index"
language = "en"
pygments_style = "sphinx"
html_theme = "furo"
html_static_path = ["_static"]
htmlhelp_basename = "nzpartdoc"
default_role = "autolink"
intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
}

EXAMPLE_URL = os.environ.get("NZPART_EXAMPLE_URL", "example/")


def readme_to_introduction(readme_path: Path, output_file: Path) -> None:
    """Copy the README, point `example/` links at EXAMPLE_URL and rename its header."""
    content = readme_path.read_text(encoding="utf-8")
    content = content.replace("(example/", f"({EXAMPLE_URL}")
    content = re.sub(r"^# .+?\n", "# 🌟 Introduction\n", content, count=1, flags=re.MULTILINE)
    output_file.write_text(content, encoding="utf-8")


def write_index_file(docs_path: Path) -> None:
    """Write an index file for the documentation."""
    content = textwrap.dedent(
        """
        ```{include} introduction.md
        ```

        ```{toctree}
        :hidden: true
        :maxdepth: 2

        introduction
        reference/index
        ```
        """,
    )
    (docs_path / "source" / "index.md").write_text(content, encoding="utf-8")


readme_to_introduction(package_path / "README.md", docs_path / "source" / "introduction.md")
write_index_file(docs_path)
