"""
Funções para exibir os resultados dos ataques.

Formata e imprime as métricas de cada execução e a tabela comparativa
entre métodos (mesmo layout de colunas da tabela de resultados).
"""

import math
import sys
from typing import Any, Dict, List, Optional, Sequence

# Ajuste de encoding (mesma lógica do arquivo principal)
if sys.stdout.encoding != "utf-8":
    try:
        sys.stdout.reconfigure(encoding="utf-8")
    except AttributeError:
        import codecs
        sys.stdout = codecs.getwriter("utf-8")(sys.stdout.buffer, "strict")


def format_value(value: Optional[float], digits: int = 4) -> str:
    """Formata numeros tratando None e infinito."""
    if value is None:
        return "N/A"
    if math.isinf(value):
        return "Inf"
    return f"{value:.{digits}f}"


def print_report(report: Dict[str, Any], title: str) -> None:
    """
    Imprime o resumo de uma execução (um MetricsReport em forma de dicionário).
    """
    print("\n" + "=" * 80)
    print(f"METRICAS - {title.upper()}")
    print("=" * 80)

    print(f"Modo: {report.get('mode', 'desconhecido')}")
    print(f"Usuario: {report.get('user_id', 'N/A')}")
    print(f"MSE: {format_value(report.get('mse'))}")
    print(f"PSNR: {format_value(report.get('psnr'), 2)} dB")
    print(f"Distancia perceptual: {format_value(report.get('perceptual'))}")

    semantic = report.get("semantic", {})
    if semantic:
        print("\nMetricas semanticas:")
        print("-" * 80)
        for name in sorted(semantic):
            print(f"  {name}: {format_value(semantic[name])}")

    # Pareamento só existe para ataques em nível de amostra
    if report.get("assignment") is not None:
        print(f"\nPareamento (original -> reconstrucao): {report['assignment']}")
    if report.get("ensemble_kept") is not None:
        kept = report["ensemble_kept"]
        print(f"Imagens mantidas pelo ensemble: {len(kept)} {kept}")
        if report.get("random_guess"):
            print("Nenhuma imagem detectada: atributos por chute aleatorio")

    reference = report.get("intra_user_reference", {})
    if reference:
        print("\nReferencia intra-usuario:")
        print("-" * 80)
        print(
            f"  MSE {format_value(reference.get('mse'))} | "
            f"PSNR {format_value(reference.get('psnr'), 2)} | "
            f"perceptual {format_value(reference.get('perceptual'))} | "
            f"similaridade {format_value(reference.get('similarity'))}",
        )

    print("\n" + "=" * 80)


def _columns(rows: Sequence[Dict[str, Any]]) -> List[str]:
    columns: List[str] = []
    for row in rows:
        for key in row:
            if key not in ("method", "runs") and key not in columns:
                columns.append(key)
    return columns


def print_comparison(rows: Sequence[Dict[str, Any]]) -> None:
    """
    Tabela comparativa: uma linha por método mais as linhas de referência.
    """
    print("\n" + "=" * 80)
    print("COMPARACAO ENTRE METODOS")
    print("=" * 80)

    if not rows:
        print("Nenhuma execucao valida para comparar.")
        print("=" * 80)
        return

    columns = _columns(rows)
    header = f"{'Metodo':<16} {'Runs':<6}" + "".join(f" {c[:14]:<14}" for c in columns)
    print(header)
    print("-" * len(header))
    for row in rows:
        line = f"{row['method']:<16} {row.get('runs', ''):<6}"
        for column in columns:
            line += f" {format_value(row.get(column)):<14}"
        print(line)
    print("-" * len(header))

    # Melhor método por MSE (ignora as linhas de referência)
    methods = [r for r in rows if r["method"] not in ("intra-user", "original batch") and r.get("mse") is not None]
    if len(methods) > 1:
        best = min(methods, key=lambda r: r["mse"])
        print(f"\nMenor MSE: {best['method']} ({format_value(best['mse'])})")

    print("=" * 80)
