/**
 * Client-side mirror of one review session: the adjudication queue in
 * server order plus per-framework tallies.
 *
 * The server owns every verdict-derived number.  The only local arithmetic
 * is the optimistic tally shown between a click and the acknowledgment,
 * and the acknowledgment always overwrites it.
 */

import { ReviewItem, Tally } from './api.js';

export type ReviewStage = 'first_reader' | 'second_reader';

export interface OptimisticSnapshot {
  tallies: Record<string, Tally>;
  item: ReviewItem;
}

export class UiSessionState {
  tallies: Record<string, Tally> = {};
  items: ReviewItem[] = [];
  stage: ReviewStage = 'first_reader';
  inFlight = false; // one verdict submission at a time

  constructor(readonly sessionId: string) {}

  /** Replace the queue, preserving server item order. */
  loadItems(items: ReviewItem[]): void {
    this.items = items.slice();
  }

  loadTallies(tallies: Record<string, Tally>): void {
    this.tallies = cloneTallies(tallies);
  }

  /**
   * Next item awaiting the selected stage.  First readers walk pending
   * items; second readers walk items that only have a first read so far.
   */
  currentItem(): ReviewItem | null {
    return this.queue()[0] ?? null;
  }

  queue(): ReviewItem[] {
    if (this.stage === 'second_reader') {
      return this.items.filter((item) => item.stage === 'first_reader');
    }
    return this.items.filter((item) => item.status === 'pending');
  }

  /**
   * Mark the item adjudicated and bump the tallies locally so the screen
   * responds to the click at once.  Returns the state to restore if the
   * server rejects the verdict.
   */
  applyOptimistic(item: ReviewItem, decision: 'tp' | 'fp'): OptimisticSnapshot {
    const snapshot: OptimisticSnapshot = {
      tallies: cloneTallies(this.tallies),
      item: { ...item },
    };
    const supersedes = item.status === 'adjudicated';
    item.status = 'adjudicated';
    item.decision = decision;
    item.stage = this.stage;
    const tally = this.tallies[item.framework];
    if (tally) {
      if (supersedes) {
        // a second read replaces the first read's contribution
        if (snapshot.item.decision === 'tp') {
          tally.tp -= 1;
        } else {
          tally.fp -= 1;
        }
      } else {
        tally.pending -= 1;
      }
      if (decision === 'tp') {
        tally.tp += 1;
      } else {
        tally.fp += 1;
      }
      const adjudicated = tally.tp + tally.fp;
      tally.ppv = adjudicated > 0 ? tally.tp / adjudicated : null;
    }
    return snapshot;
  }

  /** The acknowledgment's tallies and verdict are authoritative. */
  reconcile(tallies: Record<string, Tally>): void {
    this.tallies = cloneTallies(tallies);
  }

  revert(snapshot: OptimisticSnapshot): void {
    this.tallies = snapshot.tallies;
    const held = this.items.find(
      (item) =>
        item.report_id === snapshot.item.report_id &&
        item.framework === snapshot.item.framework,
    );
    if (held) {
      held.status = snapshot.item.status;
      held.decision = snapshot.item.decision;
      held.stage = snapshot.item.stage;
    }
  }
}

export function formatPpv(ppv: number | null): string {
  return ppv === null ? 'n/a' : ppv.toFixed(3);
}

function cloneTallies(tallies: Record<string, Tally>): Record<string, Tally> {
  const copy: Record<string, Tally> = {};
  for (const [framework, tally] of Object.entries(tallies)) {
    copy[framework] = { ...tally };
  }
  return copy;
}
