"""Early, middle and late audio-visual fusion for transformer speech recognition.

Everything runs on a small numpy reverse-mode autodiff engine
(:mod:`avfusion.tensor`).  The main entry points are
:class:`avfusion.model.AVSRModel`, :func:`avfusion.trainer.train`,
:func:`avfusion.evaluation.evaluate_matrix` and the ``avfusion`` command.
"""

__version__ = "0.1.0"
