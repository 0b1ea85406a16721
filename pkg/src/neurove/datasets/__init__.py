"""Dataset generators and readers (sine sequences, poses, synthetic event clips)."""
