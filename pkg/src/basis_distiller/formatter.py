"""Output formatting module."""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table

console = Console()


class ReportFormatter:
    """Format reports, traces and statistics for the console and for files."""

    @staticmethod
    def format_metric(value: Optional[float]) -> str:
        """Format a metric to four decimals.

        Args:
            value: Metric value or None when undefined

        Returns:
            Formatted string ("n/a" for None)
        """
        if value is None:
            return "n/a"
        return f"{value:.4f}"

    @staticmethod
    def print_report_table(report: Dict[str, Any], title: str = "Evaluation") -> None:
        """Print an evaluation report (accuracy, AUC, per-class accuracy).

        Args:
            report: EvalReport as a dictionary
            title: Table title
        """
        table = Table(title=title)
        table.add_column("Metric", style="cyan")
        table.add_column("Value", justify="right", style="green")

        table.add_row("accuracy", ReportFormatter.format_metric(report.get("accuracy")))
        table.add_row("auc", ReportFormatter.format_metric(report.get("auc")))
        for c, acc in enumerate(report.get("per_class_accuracy", [])):
            table.add_row(f"class {c} accuracy", ReportFormatter.format_metric(acc))
        table.add_row("graphs evaluated", str(report.get("n_eval", 0)))

        console.print(table)

    @staticmethod
    def print_trace_table(
        rows: List[Dict[str, Any]], title: str = "Distillation trace", last: int = 10
    ) -> None:
        """Print the last few outer steps of a distillation trace.

        Args:
            rows: Trace rows (see TRACE_COLUMNS)
            title: Table title
            last: Number of trailing steps to show
        """
        table = Table(title=title)

        table.add_column("Step", justify="right", style="dim")
        table.add_column("L_sem", justify="right", style="green")
        table.add_column("L_geo", justify="right", style="yellow")
        table.add_column("L_spec", justify="right", style="blue")
        table.add_column("Total", justify="right")
        table.add_column("Energy gap", justify="right", style="cyan")

        for row in rows[-last:]:
            table.add_row(
                str(row["step"]),
                ReportFormatter.format_metric(row["L_sem"]),
                ReportFormatter.format_metric(row["L_geo"]),
                ReportFormatter.format_metric(row["L_spec"]),
                ReportFormatter.format_metric(row["total"]),
                ReportFormatter.format_metric(row["energy_gap"]),
            )

        console.print(table)

    @staticmethod
    def print_summary_table(rows: List[Dict[str, Any]], title: str = "Summary") -> None:
        """Print rows of equal keys as a table (aggregates, ablations, sweeps).

        Args:
            rows: List of flat dictionaries
            title: Table title
        """
        table = Table(title=title)
        if not rows:
            console.print(table)
            return
        for key in rows[0]:
            table.add_column(str(key), justify="right")
        for row in rows:
            table.add_row(
                *[
                    ReportFormatter.format_metric(v) if isinstance(v, float) else str(v)
                    for v in row.values()
                ]
            )
        console.print(table)

    @staticmethod
    def print_surface_table(
        rows: List[Dict[str, Any]], metric: str = "accuracy", title: str = "Sensitivity surface"
    ) -> None:
        """Print the seed-mean of a metric per (lambda1, lambda2) cell as a grid.

        Args:
            rows: Joint sweep rows with lambda1, lambda2 and the metric; numbers
                or the strings read back from a CSV
            metric: Column to average
            title: Table title
        """
        cells: Dict[Tuple[float, float], List[float]] = {}
        for row in rows:
            key = (float(row["lambda1"]), float(row["lambda2"]))
            value = row.get(metric)
            if value not in (None, ""):
                cells.setdefault(key, []).append(float(value))
        lambda1_values = sorted({float(row["lambda1"]) for row in rows})
        lambda2_values = sorted({float(row["lambda2"]) for row in rows})

        table = Table(title=f"{title} ({metric})")
        table.add_column("lambda1 \\ lambda2", style="cyan")
        for b in lambda2_values:
            table.add_column(f"{b:g}", justify="right")
        for a in lambda1_values:
            table.add_row(
                f"{a:g}",
                *[
                    ReportFormatter.format_metric(float(np.mean(cells[(a, b)])))
                    if (a, b) in cells
                    else "n/a"
                    for b in lambda2_values
                ],
            )
        console.print(table)

    @staticmethod
    def save_json(payload: Any, filename: str, silent: bool = True) -> None:
        """Write a JSON document with sorted keys.

        Args:
            payload: JSON-serialisable object
            filename: Output filename
            silent: If True, suppress the confirmation line
        """
        Path(filename).parent.mkdir(parents=True, exist_ok=True)
        with open(filename, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        if not silent:
            console.print(f"[bold green]Saved {filename}[/bold green]")

    @staticmethod
    def save_rows_to_csv(
        rows: List[Dict[str, Any]],
        filename: str,
        fields: Sequence[str],
        silent: bool = True,
    ) -> None:
        """Save rows to a CSV file.

        Args:
            rows: List of row dictionaries
            filename: Output filename
            fields: Columns to write, in order
            silent: If True, suppress the confirmation line
        """
        Path(filename).parent.mkdir(parents=True, exist_ok=True)
        ReportFormatter._write_csv_format(rows, filename, list(fields))

        if not silent:
            console.print(f"[bold green]Saved {len(rows)} rows to {filename}[/bold green]")

    @staticmethod
    def append_csv_row(row: Dict[str, Any], filename: str, fields: Sequence[str]) -> None:
        """Append one row, writing the header first if the file is new.

        Args:
            row: Row dictionary
            filename: CSV filename
            fields: Columns to write, in order
        """
        path = Path(filename)
        path.parent.mkdir(parents=True, exist_ok=True)
        new_file = not path.exists()
        with open(path, "a", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(fields), lineterminator="\n")
            if new_file:
                writer.writeheader()
            writer.writerow({field: row.get(field, "") for field in fields})

    @staticmethod
    def save_embeddings_csv(
        embeddings: np.ndarray,
        labels: Sequence[Optional[int]],
        filename: str,
        silent: bool = True,
    ) -> None:
        """Write per-graph readout vectors (one row per graph).

        Args:
            embeddings: N x h array
            labels: Graph labels (None allowed)
            filename: Output filename
            silent: If True, suppress the confirmation line
        """
        fields = ["graph", "label"] + [f"e{i}" for i in range(embeddings.shape[1])]
        rows = []
        for index, (vector, label) in enumerate(zip(embeddings, labels)):
            row = {"graph": index, "label": "" if label is None else label}
            row.update({f"e{i}": float(v) for i, v in enumerate(vector)})
            rows.append(row)
        ReportFormatter.save_rows_to_csv(rows, filename, fields, silent)

    @staticmethod
    def _write_csv_format(
        rows: List[Dict[str, Any]], filename: str, fields: List[str]
    ) -> None:
        """Write rows in CSV format.

        Args:
            rows: List of row dictionaries
            filename: Output filename
            fields: List of columns to include in CSV
        """
        with open(filename, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
            writer.writeheader()

            for row in rows:
                writer.writerow({field: row.get(field, "") for field in fields})

    @staticmethod
    def load_rows_from_csv(filename: str) -> List[Dict[str, str]]:
        """Load rows from a CSV file.

        Args:
            filename: Input CSV filename

        Returns:
            List of row dictionaries (values as strings)

        Raises:
            FileNotFoundError: If the CSV file doesn't exist
            ValueError: If the CSV file has no header
        """
        file_path = Path(filename)
        if not file_path.exists():
            raise FileNotFoundError(f"CSV file not found: {filename}")

        with open(filename, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if not reader.fieldnames:
                raise ValueError(f"CSV file has no header: {filename}")
            return [dict(row) for row in reader]
