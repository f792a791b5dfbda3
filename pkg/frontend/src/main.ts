/**
 * Single-page review console: configure a detection run, watch its
 * progress, then adjudicate flagged reports one click at a time with
 * live precision feedback.
 *
 * Pure client of the review service API.  Milestones are announced as
 * bubbling DOM events ("review:started", "review:ready", "review:verdict",
 * "review:verdict-error", "review:done") so embedding pages can react.
 */

import {
  ApiClient,
  ApiError,
  ProviderSpec,
  ReviewItem,
  SessionSummary,
  StartSessionBody,
  Tally,
} from './api.js';
import { formatPpv, ReviewStage, UiSessionState } from './state.js';
import { bindReviewKeys } from './keyboard.js';

export interface AppOptions {
  baseUrl: string;
  token?: string;
  pollIntervalMs?: number;
}

export function initApp(root: HTMLElement, options: AppOptions): void {
  new ReviewApp(root, options).showConsole();
}

class ReviewApp {
  private api: ApiClient;
  private pollIntervalMs: number;
  private state: UiSessionState | null = null;
  private unbindKeys: (() => void) | null = null;

  constructor(private root: HTMLElement, private options: AppOptions) {
    this.api = new ApiClient(options.baseUrl, options.token);
    this.pollIntervalMs = options.pollIntervalMs ?? 400;
  }

  /** Figure-style launch form: corpus upload, models, provider, credential. */
  showConsole(): void {
    this.teardownReview();
    this.root.innerHTML = `
      <section class="console">
        <h1>Report review console</h1>
        <form id="start-form">
          <label>Session name
            <input id="session-name" type="text" value="review session">
          </label>
          <label>Report CSV
            <input id="corpus-file" type="file" accept=".csv,text/csv">
          </label>
          <fieldset id="frameworks">
            <legend>Frameworks</legend>
            <label><input type="checkbox" value="f1" checked> f1 (single pass)</label>
            <label><input type="checkbox" value="f2" checked> f2 (structured pass)</label>
            <label><input type="checkbox" value="f3" checked> f3 (verified cascade)</label>
          </fieldset>
          <label>Advanced model
            <input id="model-advanced" type="text" value="o3">
          </label>
          <label>Lightweight model
            <input id="model-lightweight" type="text" value="gpt-4.1-nano">
          </label>
          <label>Provider
            <select id="provider-kind">
              <option value="http">live gateway</option>
              <option value="scripted">scripted fixtures</option>
              <option value="stochastic">stochastic simulation</option>
            </select>
          </label>
          <div class="provider-fields" data-kind="http">
            <label>Gateway URL
              <input id="base-url" type="text" placeholder="https://api.openai.com/v1">
            </label>
            <label>API key
              <input id="credential" type="password" autocomplete="off">
            </label>
          </div>
          <div class="provider-fields" data-kind="scripted" hidden>
            <label>Fixtures path (on the server)
              <input id="fixtures-path" type="text">
            </label>
          </div>
          <div class="provider-fields" data-kind="stochastic" hidden>
            <label>Sensitivity
              <input id="sensitivity" type="number" value="1.0" min="0" max="1" step="0.01">
            </label>
            <label>Specificity
              <input id="specificity" type="number" value="0.9" min="0" max="1" step="0.01">
            </label>
            <label>Seed
              <input id="seed" type="number" value="0" step="1">
            </label>
          </div>
          <button id="start-button" type="submit">Start run</button>
          <p id="console-error" class="error" role="alert" hidden></p>
        </form>
      </section>
    `;
    const form = this.query<HTMLFormElement>('#start-form');
    form.addEventListener('submit', (event) => {
      event.preventDefault();
      void this.handleStart();
    });
    const kindSelect = this.query<HTMLSelectElement>('#provider-kind');
    kindSelect.addEventListener('change', () => {
      for (const block of this.root.querySelectorAll<HTMLElement>('.provider-fields')) {
        block.hidden = block.dataset.kind !== kindSelect.value;
      }
    });
  }

  private async handleStart(): Promise<void> {
    const fileInput = this.query<HTMLInputElement>('#corpus-file');
    const credentialInput = this.query<HTMLInputElement>('#credential');
    const kind = this.query<HTMLSelectElement>('#provider-kind').value;
    const frameworks = Array.from(
      this.root.querySelectorAll<HTMLInputElement>('#frameworks input:checked'),
      (box) => box.value,
    );

    // Validate locally before anything is uploaded
    const file = fileInput.files && fileInput.files[0];
    if (!file) {
      return this.consoleError('choose a report CSV first');
    }
    if (frameworks.length === 0) {
      return this.consoleError('select at least one framework');
    }
    const provider: ProviderSpec = { kind: kind as ProviderSpec['kind'] };
    if (kind === 'http') {
      const baseUrl = this.query<HTMLInputElement>('#base-url').value.trim();
      if (!baseUrl) {
        return this.consoleError('the live gateway needs a gateway URL');
      }
      if (!credentialInput.value) {
        return this.consoleError('the live gateway needs an API key');
      }
      provider.base_url = baseUrl;
      provider.api_key = credentialInput.value;
    } else if (kind === 'scripted') {
      const fixturesPath = this.query<HTMLInputElement>('#fixtures-path').value.trim();
      if (!fixturesPath) {
        return this.consoleError('scripted fixtures need a fixtures path');
      }
      provider.fixtures_path = fixturesPath;
    } else {
      provider.sensitivity = Number(this.query<HTMLInputElement>('#sensitivity').value);
      provider.specificity = Number(this.query<HTMLInputElement>('#specificity').value);
      provider.seed = Number(this.query<HTMLInputElement>('#seed').value);
    }
    const corpusCsv = await readFileText(file);
    if (!corpusCsv.trim()) {
      return this.consoleError('the report CSV is empty');
    }

    const body: StartSessionBody = {
      name: this.query<HTMLInputElement>('#session-name').value || 'review session',
      corpus_csv: corpusCsv,
      frameworks,
      provider,
      models: {
        lightweight: this.query<HTMLInputElement>('#model-lightweight').value,
        advanced: this.query<HTMLInputElement>('#model-advanced').value,
      },
    };
    let sessionId: string;
    try {
      const started = await this.api.startSession(body);
      sessionId = started.session_id;
    } catch (err) {
      return this.consoleError(messageOf(err));
    }
    // The credential's only copy went out with that request
    credentialInput.value = '';
    this.showProgress(sessionId);
  }

  private consoleError(message: string): void {
    const box = this.query<HTMLElement>('#console-error');
    box.textContent = message;
    box.hidden = false;
  }

  private showProgress(sessionId: string): void {
    this.root.innerHTML = `
      <section class="progress">
        <h1>Run in progress</h1>
        <p id="progress-line">starting</p>
        <p id="progress-error" class="error" role="alert" hidden></p>
      </section>
    `;
    this.announce('review:started', { sessionId });
    void this.pollUntilSettled(sessionId);
  }

  private async pollUntilSettled(sessionId: string): Promise<void> {
    for (;;) {
      let summary: SessionSummary;
      try {
        summary = await this.api.getSession(sessionId);
      } catch (err) {
        this.progressError(messageOf(err));
        return;
      }
      const line = this.root.querySelector<HTMLElement>('#progress-line');
      if (line) {
        line.textContent =
          `${summary.corpus_name}: ${summary.progress.completed} of ` +
          `${summary.progress.total} reports processed`;
      }
      if (summary.status === 'failed') {
        this.progressError(`run failed: ${summary.failure ?? 'unknown reason'}`);
        return;
      }
      if (summary.status === 'complete') {
        await this.showReview(sessionId, summary);
        return;
      }
      await sleep(this.pollIntervalMs);
    }
  }

  private progressError(message: string): void {
    const box = this.root.querySelector<HTMLElement>('#progress-error');
    if (box) {
      box.textContent = message;
      box.hidden = false;
    }
    const back = document.createElement('button');
    back.textContent = 'Back to console';
    back.addEventListener('click', () => this.showConsole());
    this.root.querySelector('section')?.appendChild(back);
  }

  /** Adjudication screen: report on the left, detected error on the right. */
  private async showReview(sessionId: string, summary: SessionSummary): Promise<void> {
    let items: ReviewItem[];
    try {
      items = (await this.api.getItems(sessionId)).items;
    } catch (err) {
      this.progressError(messageOf(err));
      return;
    }
    const state = new UiSessionState(sessionId);
    state.loadTallies(summary.tallies);
    state.loadItems(items);
    this.state = state;

    this.root.innerHTML = `
      <section class="review">
        <header>
          <h1>${escapeHtml(summary.name)}</h1>
          <p class="session-line">${escapeHtml(summary.corpus_name)},
            ${summary.corpus_size} reports, ${items.length} flagged</p>
          <div id="tallies" class="tallies"></div>
        </header>
        <p id="queue-line" class="queue-line"></p>
        <div class="panels">
          <div id="report-panel" class="panel"></div>
          <div id="error-panel" class="panel"></div>
        </div>
        <div class="controls">
          <label>Stage
            <select id="stage-select">
              <option value="first_reader">first reader</option>
              <option value="second_reader">second reader</option>
            </select>
          </label>
          <button id="btn-tp" class="verdict-btn tp">True positive <span class="kbd">T</span></button>
          <button id="btn-fp" class="verdict-btn fp">False positive <span class="kbd">F</span></button>
        </div>
        <p id="notice" class="notice" role="status" hidden></p>
      </section>
    `;
    this.query<HTMLElement>('#btn-tp').addEventListener('click', () => {
      void this.submitVerdict('tp');
    });
    this.query<HTMLElement>('#btn-fp').addEventListener('click', () => {
      void this.submitVerdict('fp');
    });
    const stageSelect = this.query<HTMLSelectElement>('#stage-select');
    stageSelect.addEventListener('change', () => {
      state.stage = stageSelect.value as ReviewStage;
      this.clearNotice();
      this.renderCurrent();
    });
    this.unbindKeys = bindReviewKeys(document, {
      onTruePositive: () => void this.submitVerdict('tp'),
      onFalsePositive: () => void this.submitVerdict('fp'),
    });

    this.renderTallies();
    this.renderCurrent();
    this.announce('review:ready', { sessionId, items: items.length });
  }

  private async submitVerdict(decision: 'tp' | 'fp'): Promise<void> {
    const state = this.state;
    // an unmounted console must not react to clicks or keys
    if (!state || state.inFlight || !this.root.isConnected) {
      return;
    }
    const item = state.currentItem();
    if (!item) {
      return;
    }
    state.inFlight = true;
    this.setButtonsEnabled(false);
    this.clearNotice();
    const snapshot = state.applyOptimistic(item, decision);
    this.renderTallies();
    this.renderCurrent();
    try {
      const response = await this.api.postVerdict(state.sessionId, {
        report_id: item.report_id,
        framework: item.framework,
        decision,
        reviewer_id: 'reviewer',
        stage: state.stage,
      });
      state.reconcile(response.tallies);
      item.decision = response.verdict.decision;
      item.stage = response.verdict.stage;
      this.announce('review:verdict', {
        reportId: item.report_id,
        framework: item.framework,
        decision,
      });
    } catch (err) {
      state.revert(snapshot);
      if (err instanceof ApiError && err.status === 409) {
        // Adjudicated elsewhere; pick up the server's view of the queue
        await this.refreshItems(state);
        this.notify('already adjudicated at this stage; queue refreshed');
      } else {
        this.notify(`verdict failed: ${messageOf(err)}`);
      }
      this.announce('review:verdict-error', { reportId: item.report_id });
    } finally {
      state.inFlight = false;
      this.setButtonsEnabled(true);
      this.renderTallies();
      this.renderCurrent();
    }
  }

  private async refreshItems(state: UiSessionState): Promise<void> {
    try {
      const [summary, fetched] = await Promise.all([
        this.api.getSession(state.sessionId),
        this.api.getItems(state.sessionId),
      ]);
      state.loadTallies(summary.tallies);
      state.loadItems(fetched.items);
    } catch (err) {
      this.notify(`refresh failed: ${messageOf(err)}`);
    }
  }

  /** Live per-framework precision header; data-ppv carries the exact value. */
  private renderTallies(): void {
    const state = this.state;
    if (!state) {
      return;
    }
    const strip = this.root.querySelector<HTMLElement>('#tallies');
    if (!strip) {
      return;
    }
    strip.innerHTML = Object.entries(state.tallies)
      .map(
        ([framework, tally]: [string, Tally]) => `
        <div class="tally" data-framework="${escapeHtml(framework)}">
          <span class="tally-framework">${escapeHtml(framework)}</span>
          <span class="tally-ppv" data-framework="${escapeHtml(framework)}"
            data-ppv="${tally.ppv === null ? 'null' : String(tally.ppv)}">PPV ${formatPpv(tally.ppv)}</span>
          <span class="tally-counts">${tally.tp} TP, ${tally.fp} FP,
            ${tally.flagged} flagged, ${tally.pending} pending</span>
        </div>`,
      )
      .join('');
  }

  private renderCurrent(): void {
    const state = this.state;
    if (!state) {
      return;
    }
    const reportPanel = this.root.querySelector<HTMLElement>('#report-panel');
    const errorPanel = this.root.querySelector<HTMLElement>('#error-panel');
    const queueLine = this.root.querySelector<HTMLElement>('#queue-line');
    if (!reportPanel || !errorPanel || !queueLine) {
      return;
    }
    const item = state.currentItem();
    if (!item) {
      const exportUrl = `${this.options.baseUrl}/sessions/${state.sessionId}/export`;
      queueLine.textContent = 'queue complete';
      reportPanel.innerHTML = `
        <h2>All items reviewed</h2>
        <p>${
          state.stage === 'second_reader'
            ? 'No items are awaiting a second read.'
            : 'No items are awaiting a first read.'
        }</p>
        <p><a id="export-link" href="${exportUrl}">Download adjudicated outcomes</a></p>
      `;
      errorPanel.innerHTML = '';
      this.setButtonsEnabled(false);
      this.announce('review:done', { sessionId: state.sessionId });
      return;
    }
    queueLine.textContent = `${state.queue().length} item(s) awaiting ${
      state.stage === 'second_reader' ? 'a second read' : 'review'
    }`;
    reportPanel.innerHTML = item.findings
      ? `
        <h2>Findings</h2>
        <p>${escapeHtml(item.findings)}</p>
        <h2>Impression</h2>
        <p>${escapeHtml(item.impression ?? '')}</p>`
      : `
        <h2>Report</h2>
        <p>${escapeHtml(item.report_text ?? '')}</p>`;
    errorPanel.innerHTML = `
      <p class="item-meta">
        <span class="badge badge-framework">${escapeHtml(item.framework)}</span>
        <span class="badge badge-report">${escapeHtml(item.report_id)}</span>
        <span class="badge badge-modality">${escapeHtml(item.modality)}</span>
      </p>
      <h2>Detected error</h2>
      <p id="item-error">${escapeHtml(item.error)}</p>
      <h2>Reasoning</h2>
      <p id="item-reason">${escapeHtml(item.error_reason)}</p>
      ${
        item.status === 'adjudicated'
          ? `<p class="prior-read">first read: ${escapeHtml(item.decision ?? '')}</p>`
          : ''
      }
    `;
    this.setButtonsEnabled(!state.inFlight);
  }

  private setButtonsEnabled(enabled: boolean): void {
    for (const button of this.root.querySelectorAll<HTMLButtonElement>('.verdict-btn')) {
      button.disabled = !enabled;
    }
  }

  private notify(message: string): void {
    const box = this.root.querySelector<HTMLElement>('#notice');
    if (box) {
      box.textContent = message;
      box.hidden = false;
    }
  }

  private clearNotice(): void {
    const box = this.root.querySelector<HTMLElement>('#notice');
    if (box) {
      box.textContent = '';
      box.hidden = true;
    }
  }

  private teardownReview(): void {
    if (this.unbindKeys) {
      this.unbindKeys();
      this.unbindKeys = null;
    }
    this.state = null;
  }

  private announce(name: string, detail: Record<string, unknown>): void {
    this.root.dispatchEvent(new CustomEvent(name, { bubbles: true, detail }));
  }

  private query<T extends Element>(selector: string): T {
    const found = this.root.querySelector<T>(selector);
    if (!found) {
      throw new Error(`missing element: ${selector}`);
    }
    return found;
  }
}

function readFileText(file: Blob): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => resolve(String(reader.result ?? ''));
    reader.onerror = () => reject(reader.error ?? new Error('file read failed'));
    reader.readAsText(file);
  });
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function escapeHtml(text: string): string {
  const div = document.createElement('div');
  div.textContent = text;
  return div.innerHTML;
}

function messageOf(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
