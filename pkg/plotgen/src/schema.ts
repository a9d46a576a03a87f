/** Figure kinds and the CSV columns each one requires.
 *
 * Column binding is header-keyed: extra columns and column order are
 * irrelevant, but a missing required column is a hard error (no partial
 * plots). Legend entries are listed in the caption's order.
 */

export type FigureKind = "fig2" | "fig3" | "fig4" | "herald_hist";
export type OutputFormat = "svg" | "pdf" | "png";

export interface SeriesSpec {
  column: string;
  label: string;
  /** optional column holding the standard error of the series */
  stderrColumn?: string;
}

export interface FigureSchema {
  kind: FigureKind;
  xColumn: string;
  xLabel: string;
  yLabel: string;
  title: string;
  series: SeriesSpec[];
}

export class SchemaError extends Error {}

const FIG2_KAPPAS = ["0.1", "0.2", "0.5", "1.0"];
const FIG3_GAMMAS = ["0.01", "0.05", "0.1", "0.5", "1.0"];

export const SCHEMAS: Record<Exclude<FigureKind, "herald_hist">, FigureSchema> = {
  fig2: {
    kind: "fig2",
    xColumn: "lambda_t",
    xLabel: "lambda * t",
    yLabel: "mean detected photon number N (per port)",
    title: "Detected photon number vs drive time",
    // caption order: bottom to top, kappa/lambda = 0.1, 0.2, 0.5, 1.0
    series: FIG2_KAPPAS.map((k) => ({
      column: `N_kappa_${k}`,
      label: `kappa/lambda = ${k}`,
    })),
  },
  fig3: {
    kind: "fig3",
    xColumn: "lambda_T",
    xLabel: "lambda * T (drive time)",
    yLabel: "heralded Bell fidelity F",
    title: "Heralded fidelity vs drive time",
    // caption order: top to bottom, Gamma/lambda = 0.01 ... 1.0
    series: FIG3_GAMMAS.map((g) => ({
      column: `F_mean_gamma_${g}`,
      label: `Gamma/lambda = ${g}`,
      stderrColumn: `F_stderr_gamma_${g}`,
    })),
  },
  fig4: {
    kind: "fig4",
    xColumn: "t_ns",
    xLabel: "time (ns)",
    yLabel: "trion population",
    title: "Trion population, full four-level model",
    series: [{ column: "P_trion", label: "P_trion" }],
  },
};

/** Columns required by the heralding outcome histogram. */
export const HERALD_COLUMNS = ["success", "herald_port", "fidelity"];

export function schemaFor(kind: FigureKind): FigureSchema | null {
  if (kind === "herald_hist") return null;
  const schema = SCHEMAS[kind];
  if (!schema) throw new SchemaError(`unknown figure kind: ${kind}`);
  return schema;
}
