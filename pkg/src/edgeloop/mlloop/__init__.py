"""Model deployment verification: stream labeled data to an inference
pipeline over channels and compare outputs against ground truth and against
a reference deployment."""
