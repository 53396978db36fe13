# Estimación de profundidad en video con ST-CLSTM
__version__ = "0.1.0"
