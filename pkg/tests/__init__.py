# Tests for INS/DVL fusion
