"""Pacote raiz do laboratorio DiffULA (ver src/diffula)."""
