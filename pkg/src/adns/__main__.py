from .cli import adns

adns()
