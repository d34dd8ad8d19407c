# utils module 