# INS/DVL fusion - library modules
