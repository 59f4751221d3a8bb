# Test Suite Package 