# src module 