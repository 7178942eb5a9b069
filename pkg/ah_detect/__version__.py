__title__ = "ah-detect"
__version__ = "0.3.0"
__author__ = "A/H Pipeline Maintainers"
__author_email__ = "ah-detect@users.noreply.github.com"
