/**
 * Keyboard shortcuts for the review screen: T and F mirror the
 * true-positive and false-positive buttons exactly.
 */

export interface VerdictKeyHandlers {
  onTruePositive: () => void;
  onFalsePositive: () => void;
}

export function bindReviewKeys(target: Document, handlers: VerdictKeyHandlers): () => void {
  const listener = (event: KeyboardEvent) => {
    // Don't steal keystrokes from form fields
    if (
      event.target instanceof HTMLInputElement ||
      event.target instanceof HTMLTextAreaElement ||
      event.target instanceof HTMLSelectElement
    ) {
      return;
    }
    switch (event.key.toLowerCase()) {
      case 't':
        event.preventDefault();
        handlers.onTruePositive();
        break;
      case 'f':
        event.preventDefault();
        handlers.onFalsePositive();
        break;
    }
  };
  target.addEventListener('keydown', listener);
  return () => target.removeEventListener('keydown', listener);
}
