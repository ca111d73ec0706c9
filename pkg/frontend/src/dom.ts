// DOM rendering for the study flow. One screen at a time inside #app;
// verdict buttons are disabled while a submission is in flight.

import { SessionReport, Verdict } from "./api.js";
import { FlowView, TrialView } from "./flow.js";

export class DomView implements FlowView {
  private onVerdict: ((verdict: Verdict) => void) | null = null;

  constructor(private readonly root: HTMLElement) {
    document.addEventListener("keydown", (event) => {
      if (event.key === "r" || event.key === "R") this.pressVerdict("real");
      if (event.key === "w" || event.key === "W") this.pressVerdict("wax");
    });
  }

  bindVerdict(handler: (verdict: Verdict) => void): void {
    this.onVerdict = handler;
  }

  private pressVerdict(verdict: Verdict): void {
    const button = this.root.querySelector<HTMLButtonElement>(
      verdict === "real" ? "#btn-real" : "#btn-wax",
    );
    if (button && !button.disabled) button.click();
  }

  private screen(html: string): void {
    this.root.innerHTML = html;
  }

  showStart(): void {
    this.screen(`
      <section class="card">
        <h1>Real or wax?</h1>
        <p>You will see one face at a time. Decide whether it is a real
           person or a wax figure. Keyboard: <kbd>R</kbd> real, <kbd>W</kbd> wax.</p>
        <form id="start-form">
          <input id="volunteer" type="text" placeholder="Your name" autocomplete="off" required />
          <button type="submit">Start</button>
        </form>
      </section>`);
    const form = this.root.querySelector<HTMLFormElement>("#start-form")!;
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const name = this.root.querySelector<HTMLInputElement>("#volunteer")!.value;
      this.startHandler?.(name);
    });
  }

  private startHandler: ((volunteer: string) => void) | null = null;

  bindStart(handler: (volunteer: string) => void): void {
    this.startHandler = handler;
  }

  showLoading(message: string): void {
    this.screen(`<section class="card"><p class="loading">${message}</p></section>`);
  }

  showTrial(trial: TrialView): void {
    this.screen(`
      <section class="card trial">
        <p class="progress">Trial ${trial.index + 1} of ${trial.total}</p>
        <img id="face" src="${trial.imageUrl}" alt="face to judge" />
        <div class="verdicts">
          <button id="btn-real">Real <kbd>R</kbd></button>
          <button id="btn-wax">Wax <kbd>W</kbd></button>
        </div>
      </section>`);
    for (const [id, verdict] of [["#btn-real", "real"], ["#btn-wax", "wax"]] as const) {
      this.root.querySelector<HTMLButtonElement>(id)!.addEventListener("click", () => {
        this.disableVerdicts();
        this.onVerdict?.(verdict);
      });
    }
  }

  private disableVerdicts(): void {
    for (const button of this.root.querySelectorAll<HTMLButtonElement>(".verdicts button")) {
      button.disabled = true;
    }
  }

  showReport(report: SessionReport): void {
    this.screen(`
      <section class="card report">
        <h1>Session complete</h1>
        <p>Thanks, ${report.volunteer} — ${report.total} faces judged.</p>
        <table>
          <tr><th>APCER</th><td id="apcer">${report.apcer_pct}%</td>
              <td class="hint">wax faces taken for real</td></tr>
          <tr><th>BPCER</th><td id="bpcer">${report.bpcer_pct}%</td>
              <td class="hint">real faces taken for wax</td></tr>
          <tr><th>ACER</th><td id="acer">${report.acer_pct}%</td>
              <td class="hint">average of the two</td></tr>
        </table>
      </section>`);
  }

  showError(message: string, retry: () => void): void {
    this.screen(`
      <section class="card error">
        <h1>Something went wrong</h1>
        <p>${message}</p>
        <button id="retry">Try again</button>
      </section>`);
    this.root.querySelector<HTMLButtonElement>("#retry")!.addEventListener("click", retry);
  }
}

export function preloadImage(url: string): Promise<void> {
  return new Promise((resolve) => {
    const image = new Image();
    image.onload = () => resolve();
    image.onerror = () => resolve(); // show the trial anyway; <img> will retry
    image.src = url;
  });
}
