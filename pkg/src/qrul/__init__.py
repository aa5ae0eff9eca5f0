"""Hybrid quantum-classical recurrent networks for remaining-useful-life prediction.

Modules: ``qsim`` (statevector simulator), ``qdi`` (4-qubit QDI layer),
``nn`` (autodiff, Adam, checkpoints), ``model`` (QLSTM/LSTM networks),
``data`` (C-MAPSS pipeline), ``train`` (training and evaluation),
``analysis`` (circuit diagnostics) and ``cli``.
"""

__version__ = "0.1.0"
