# repositories module
