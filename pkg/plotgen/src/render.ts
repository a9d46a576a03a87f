/** Figure assembly: CSV text in, finished figure bytes out.
 *
 * Rendering is a pure function of the CSV bytes and the figure spec; no
 * values are recomputed and nothing time- or environment-dependent enters
 * the output, so re-rendering reproduces identical bytes.
 */

import { numericColumn, parseCsv, stringColumn, Table } from "./csv.js";
import { Canvas, SvgCanvas } from "./canvas.js";
import { PdfCanvas } from "./pdf.js";
import { extent, formatTick, linear } from "./scale.js";
import { FigureKind, HERALD_COLUMNS, OutputFormat, SchemaError, schemaFor } from "./schema.js";

export interface FigureSpec {
  inputCsv: string; // raw CSV text
  figureKind: FigureKind;
  format: OutputFormat;
}

const W = 640;
const H = 440;
const MARGIN = { left: 72, right: 24, top: 40, bottom: 52 };
const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

function makeCanvas(format: OutputFormat): Canvas {
  if (format === "svg") return new SvgCanvas(W, H);
  if (format === "pdf") return new PdfCanvas(W, H);
  throw new SchemaError(
    "png output needs an external rasterizer; render svg and convert instead",
  );
}

function frame(c: Canvas, title: string, xLabel: string, yLabel: string) {
  c.text(W / 2, MARGIN.top - 18, title, 14, "middle");
  c.text(W / 2, H - 12, xLabel, 12, "middle");
  c.text(16, (MARGIN.top + H - MARGIN.bottom) / 2, yLabel, 12, "middle", "#000", -90);
}

function axes(c: Canvas, xs: ReturnType<typeof linear>, ys: ReturnType<typeof linear>) {
  const x0 = MARGIN.left;
  const x1 = W - MARGIN.right;
  const y0 = H - MARGIN.bottom;
  const y1 = MARGIN.top;
  c.polyline(
    [
      [x0, y1],
      [x0, y0],
      [x1, y0],
    ],
    "#000",
    1,
  );
  for (const t of xs.ticks()) {
    const px = xs.map(t);
    c.polyline(
      [
        [px, y0],
        [px, y0 + 4],
      ],
      "#000",
      1,
    );
    c.text(px, y0 + 16, formatTick(t), 10, "middle");
  }
  for (const t of ys.ticks()) {
    const py = ys.map(t);
    c.polyline(
      [
        [x0 - 4, py],
        [x0, py],
      ],
      "#000",
      1,
    );
    c.text(x0 - 7, py + 3, formatTick(t), 10, "end");
    c.polyline(
      [
        [x0, py],
        [x1, py],
      ],
      "#eeeeee",
      0.5,
    );
  }
}

interface Series {
  label: string;
  color: string;
  points: Array<[number, number]>; // data coordinates
  stderr?: number[];
}

function drawSeries(c: Canvas, series: Series[], xs: ReturnType<typeof linear>, ys: ReturnType<typeof linear>) {
  for (const s of series) {
    let run: Array<[number, number]> = [];
    const flush = () => {
      if (run.length > 0) c.polyline(run, s.color, 1.6);
      run = [];
    };
    s.points.forEach(([x, y], i) => {
      if (!Number.isFinite(y)) {
        flush();
        return;
      }
      run.push([xs.map(x), ys.map(y)]);
      const se = s.stderr?.[i];
      if (se !== undefined && Number.isFinite(se) && se > 0) {
        const px = xs.map(x);
        c.polyline(
          [
            [px, ys.map(y - se)],
            [px, ys.map(y + se)],
          ],
          s.color,
          1,
        );
      }
    });
    flush();
  }
}

function legend(c: Canvas, series: Series[]) {
  const x = W - MARGIN.right - 170;
  let y = MARGIN.top + 10;
  c.rect(x - 8, y - 14, 178, series.length * 16 + 12, "#ffffff", "#999999");
  for (const s of series) {
    c.polyline(
      [
        [x, y],
        [x + 22, y],
      ],
      s.color,
      2,
    );
    c.text(x + 28, y + 3, s.label, 10, "start");
    y += 16;
  }
}

function renderLineFigure(table: Table, kind: Exclude<FigureKind, "herald_hist">, format: OutputFormat): Uint8Array {
  const schema = schemaFor(kind)!;
  const x = numericColumn(table, schema.xColumn);
  const series: Series[] = schema.series.map((sp, i) => {
    const y = numericColumn(table, sp.column);
    const stderr = sp.stderrColumn && table.columns.has(sp.stderrColumn)
      ? numericColumn(table, sp.stderrColumn)
      : undefined;
    return {
      label: sp.label,
      color: PALETTE[i % PALETTE.length],
      points: x.map((xv, j) => [xv, y[j]] as [number, number]),
      stderr,
    };
  });

  const allY = series.flatMap((s) => s.points.map(([, y]) => y)).filter(Number.isFinite);
  const [ylo, yhi] = extent(allY);
  const pad = (yhi - ylo) * 0.06;
  const xs = linear(extent(x), [MARGIN.left, W - MARGIN.right]);
  const ys = linear([Math.min(ylo, 0) , yhi + pad], [H - MARGIN.bottom, MARGIN.top]);

  const c = makeCanvas(format);
  frame(c, schema.title, schema.xLabel, schema.yLabel);
  axes(c, xs, ys);
  drawSeries(c, series, xs, ys);
  if (series.length > 1) legend(c, series);
  return c.toBytes();
}

function renderHeraldHist(table: Table, format: OutputFormat): Uint8Array {
  for (const col of HERALD_COLUMNS) {
    if (!table.columns.has(col)) {
      throw new SchemaError(
        `missing required column '${col}' (have: ${table.header.join(", ")})`,
      );
    }
  }
  const success = stringColumn(table, "success");
  const port = stringColumn(table, "herald_port");
  const fidRaw = stringColumn(table, "fidelity");
  const byPort: Record<string, number[]> = { c: [], d: [] };
  success.forEach((ok, i) => {
    if (ok !== "true") return;
    const f = Number(fidRaw[i]);
    if (!Number.isFinite(f)) {
      throw new SchemaError(`non-numeric fidelity on successful row ${i + 1}`);
    }
    (byPort[port[i]] ??= []).push(f);
  });
  const nBins = 20;
  const counts: Record<string, number[]> = {};
  for (const [p, vals] of Object.entries(byPort)) {
    const hist = new Array(nBins).fill(0);
    for (const v of vals) {
      const b = Math.min(nBins - 1, Math.max(0, Math.floor(v * nBins)));
      hist[b] += 1;
    }
    counts[p] = hist;
  }
  const maxCount = Math.max(1, ...Object.values(counts).flat());
  const xs = linear([0, 1], [MARGIN.left, W - MARGIN.right]);
  const ys = linear([0, maxCount * 1.05], [H - MARGIN.bottom, MARGIN.top]);

  const c = makeCanvas(format);
  frame(c, "Heralded fidelity by port", "parity-adjusted Bell fidelity", "trajectories");
  axes(c, xs, ys);
  const ports = ["c", "d"];
  const binW = (xs.map(1) - xs.map(0)) / nBins;
  ports.forEach((p, pi) => {
    const color = PALETTE[pi];
    (counts[p] ?? []).forEach((n, b) => {
      if (n === 0) return;
      const x = xs.map(b / nBins) + pi * (binW / 2);
      const y = ys.map(n);
      c.rect(x, y, binW / 2 - 1, ys.map(0) - y, color, null);
    });
  });
  legend(c, ports.map((p, pi) => ({
    label: `port ${p} (${(byPort[p] ?? []).length} heralds)`,
    color: PALETTE[pi],
    points: [],
  })));
  return c.toBytes();
}

export function render(spec: FigureSpec): Uint8Array {
  const table = parseCsv(spec.inputCsv);
  if (spec.figureKind === "herald_hist") return renderHeraldHist(table, spec.format);
  return renderLineFigure(table, spec.figureKind, spec.format);
}
