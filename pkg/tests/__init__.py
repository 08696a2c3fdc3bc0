# Tests for the UBGAN toolkit
