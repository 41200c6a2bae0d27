# Test module for unit tests
