import lsst_sphinx_bootstrap_theme

import adadf

rst_epilog = """

.. _mypy: http://www.mypy-lang.org
.. _pytest: https://docs.pytest.org/en/latest/
.. _tox: https://tox.readthedocs.io/en/latest/
"""

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.napoleon",
    "sphinx.ext.intersphinx",
    "sphinx_automodapi.automodapi",
    "sphinx_automodapi.smart_resolver",
    "sphinx_click",
]

source_suffix = ".rst"
master_doc = "index"

project = "adadf"
copyright = "2026 adadf developers"
author = "adadf developers"

version = adadf.__version__
release = version

exclude_patterns = ["_build", "README.rst"]
pygments_style = "sphinx"

# The reST default role cross-links Python (used for this markup: `text`)
default_role = "py:obj"

intersphinx_mapping = {
    "click": ("https://click.palletsprojects.com/en/8.0.x/", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "pydantic": ("https://pydantic-docs.helpmanual.io/", None),
    "python": ("https://docs.python.org/3/", None),
    "structlog": ("https://www.structlog.org/en/stable/", None),
}
intersphinx_timeout = 10.0  # seconds

templates_path = [lsst_sphinx_bootstrap_theme.get_html_templates_path()]
html_theme = "lsst_sphinx_bootstrap_theme"
html_theme_path = [lsst_sphinx_bootstrap_theme.get_html_theme_path()]
html_theme_options = {"logotext": project}
html_title = f"{project} v{version}"
html_short_title = project
html_show_sourcelink = False
html_copy_source = False

napoleon_google_docstring = False
napoleon_numpy_docstring = True
napoleon_include_special_with_doc = True
napoleon_use_param = True
napoleon_use_rtype = True

automodapi_inheritance_diagram = False
automodapi_toctreedirnm = "api"
automodsumm_inherited_members = False

# Class documentation holds the class docstring only, not __init__'s.
autoclass_content = "class"
autodoc_inherit_docstrings = True
autodoc_default_options = {"show-inheritance": False}
