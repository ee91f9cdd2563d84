import logging


logger = logging.getLogger("equigap")
