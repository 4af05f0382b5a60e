# Sphinx configuration for the dmrseg API pages.
# Option reference: https://www.sphinx-doc.org/en/master/usage/configuration.html

project = 'dmrseg: distance-map regularized segmentation'
copyright = '2026, the dmrseg developers'
author = 'the dmrseg developers'
release = '0.1'

extensions = [
    'autoapi.extension',
    'sphinx_rtd_theme',
]

# autoapi walks the package; no sys.path setup needed
autoapi_dirs = ['../dmrseg']
autoapi_options = ['members', 'undoc-members', 'show-inheritance', 'imported-members']

templates_path = ['_templates']

# Preset modules hold one configured ArchSpec each and add nothing to the API pages
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store', 'segnet.py', 'usegnet.py', 'unet.py']

master_doc = 'index'

html_theme = 'sphinx_rtd_theme'
pygments_style = 'sphinx'
html_static_path = ['_static']
