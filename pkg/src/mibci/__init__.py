"""Motor-imagery EEG classification: EDF ingest, time-frequency images, a
numpy CNN, and simulated live inference with a restored model."""

__version__ = "0.1.0"
