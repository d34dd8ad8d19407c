# services module 