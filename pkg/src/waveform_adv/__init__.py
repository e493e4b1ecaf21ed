"""Adversarial waveform attacks against wireless signal classifiers.

Subpackages/modules:

* :mod:`waveform_adv.dsp` - complex baseband primitives, channels, modems, IQF1 files
* :mod:`waveform_adv.nn` - small numpy CNN classifier with input gradients
* :mod:`waveform_adv.data` - synthetic modulation and device-fingerprint datasets
* :mod:`waveform_adv.whitebox` - jamming / FIR-synthesis attacks via augmented Lagrangian + NCG
* :mod:`waveform_adv.firnet` - blackbox FIR network trained from classifier feedback
* :mod:`waveform_adv.evaluation` - confusion/fooling matrices, baselines, reports
* :mod:`waveform_adv.cli` - the ``waveform-adv`` command
"""

__version__ = "0.1.0"
