# commands module
